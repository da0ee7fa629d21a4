#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace sstatl {

/// Reflectance cube, row-major (row, col, band).
struct HsiCube {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t bands = 0;
    std::vector<float> data;

    HsiCube() = default;
    HsiCube(std::uint32_t m, std::uint32_t n, std::uint32_t k, std::vector<float> values);

    std::size_t pixel_count() const { return std::size_t{rows} * cols; }
    float at(std::size_t r, std::size_t c, std::size_t b) const { return data[(r * cols + c) * bands + b]; }
    std::span<const float> spectrum(std::size_t r, std::size_t c) const {
        return {data.data() + (r * cols + c) * bands, bands};
    }
    std::span<const float> spectrum(std::size_t index) const { return {data.data() + index * bands, bands}; }

    bool operator==(const HsiCube&) const = default;
};

/// Per-pixel class ids; 0 marks an unlabeled pixel, classes are 1..C.
struct LabelMap {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint16_t> labels;

    std::size_t pixel_count() const { return std::size_t{rows} * cols; }
    std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }

    /// Largest class id; the label set is {1..class_count()} once validated.
    std::size_t class_count() const;
    /// Indices (row * cols + col) of every labeled pixel, ascending.
    std::vector<std::size_t> labeled_indices() const;
    /// Throws unless the nonzero labels are exactly {1..C} for some C >= 1.
    void validate() const;

    bool operator==(const LabelMap&) const = default;
};

struct SplitRatios {
    double train = 0.01;
    double pool = 0.49;
    double test = 0.50;
};

/// Disjoint train/pool/test partition of the labeled pixels.
struct SplitManifest {
    std::vector<std::size_t> train;
    std::vector<std::size_t> pool;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;
    SplitRatios ratios;

    nlohmann::json to_json() const;
    static SplitManifest from_json(const nlohmann::json& j);

    bool operator==(const SplitManifest& other) const;
};

/// W x W x k block around one pixel. The center sits at window position
/// (W/2, W/2); rows span [r - W/2, r + W/2).
struct PatchWindow {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t size = 0;
    std::size_t bands = 0;
    std::vector<float> values;  // (window row, window col, band)
    std::uint16_t label = 0;
};

/// Half-sample mirror: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
/// Defined for every integer offset and every n >= 1.
std::size_t mirror_index(std::int64_t i, std::size_t n);

// --- binary formats -------------------------------------------------------

std::string encode_cube(const HsiCube& cube);
HsiCube decode_cube(std::string_view bytes);
void save_cube(const std::filesystem::path& path, const HsiCube& cube);
HsiCube load_cube(const std::filesystem::path& path);

std::string encode_labels(const LabelMap& labels);
LabelMap decode_labels(std::string_view bytes);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest load_manifest(const std::filesystem::path& path);

// --- operations -----------------------------------------------------------

PatchWindow extract_window(const HsiCube& cube, const LabelMap& labels, std::pair<std::size_t, std::size_t> center,
                           std::size_t window);

/// Windows for a list of pixel indices, in the same order.
std::vector<PatchWindow> extract_windows(const HsiCube& cube, const LabelMap& labels,
                                         std::span<const std::size_t> indices, std::size_t window);

/// Per-class stratified split; each class contributes round(ratio * n) to train
/// and pool with the remainder in test, and at least one pixel to train.
SplitManifest make_split(const LabelMap& labels, SplitRatios ratios, std::uint64_t seed);

struct SynthParams {
    std::size_t classes = 4;
    std::uint32_t rows = 48;
    std::uint32_t cols = 48;
    std::uint32_t bands = 16;
    double noise_sigma = 0.0;
    double domain_shift = 0.0;
    std::uint64_t seed = 0;
};

/// sin(2*pi*b/k + 2*pi*c/C + shift) for band b of class index c in [0, C).
std::vector<double> prototype_spectrum(std::size_t class_index, std::size_t classes, std::size_t bands,
                                       double domain_shift);

/// Site pixel (row, col) of each class, class index order. Sites are distinct
/// pixels, so every class owns at least its own site.
std::vector<std::pair<std::uint32_t, std::uint32_t>> voronoi_sites(const SynthParams& params);

/// Voronoi layout of C random sites; every pixel is labeled with its nearest
/// site's class (lowest class wins ties). Spectra are class prototypes plus
/// i.i.d. Gaussian noise. Layout and noise depend only on the seed, so two
/// calls that differ only in domain_shift share geometry and noise.
std::pair<HsiCube, LabelMap> synth_cube(const SynthParams& params);

}  // namespace sstatl
