#include "sstatl/hsi_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "byte_io.hpp"
#include "sstatl/checkpoint.hpp"
#include "sstatl/errors.hpp"
#include "sstatl/rng.hpp"

namespace sstatl {

namespace {

constexpr std::string_view cube_magic = "HSIC";
constexpr std::string_view label_magic = "HSIL";

// Largest element count accepted from a header; keeps size arithmetic far from
// overflow on 64-bit hosts.
constexpr std::uint64_t max_elements = std::uint64_t{1} << 40;

std::uint64_t checked_product(std::initializer_list<std::uint32_t> dims) {
    std::uint64_t total = 1;
    for (std::uint32_t d : dims) {
        if (d == 0) throw Error(Errc::invalid_header, "zero dimension");
        if (total > max_elements / d) throw Error(Errc::dimension_overflow, "dimensions exceed supported size");
        total *= d;
    }
    return total;
}

}  // namespace

HsiCube::HsiCube(std::uint32_t m, std::uint32_t n, std::uint32_t k, std::vector<float> values)
    : rows(m), cols(n), bands(k), data(std::move(values)) {
    if (data.size() != checked_product({m, n, k}))
        throw Error(Errc::shape_mismatch, "cube data length does not match " + std::to_string(m) + "x" +
                                              std::to_string(n) + "x" + std::to_string(k));
    for (float x : data)
        if (!std::isfinite(x)) throw Error(Errc::non_finite, "cube value");
}

std::size_t LabelMap::class_count() const {
    std::uint16_t top = 0;
    for (auto l : labels) top = std::max(top, l);
    return top;
}

std::vector<std::size_t> LabelMap::labeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0) out.push_back(i);
    return out;
}

void LabelMap::validate() const {
    if (labels.size() != pixel_count()) throw Error(Errc::shape_mismatch, "label map size does not match dimensions");
    const std::size_t classes = class_count();
    if (classes == 0) throw Error(Errc::invalid_argument, "label map has no labeled pixels");
    std::vector<bool> seen(classes + 1, false);
    for (auto l : labels) seen[l] = true;
    for (std::size_t c = 1; c <= classes; ++c)
        if (!seen[c]) throw Error(Errc::invalid_argument, "class " + std::to_string(c) + " missing from label map");
}

// --- manifest -------------------------------------------------------------

nlohmann::json SplitManifest::to_json() const {
    return {{"seed", seed},
            {"ratios", {ratios.train, ratios.pool, ratios.test}},
            {"train", train},
            {"pool", pool},
            {"test", test}};
}

SplitManifest SplitManifest::from_json(const nlohmann::json& j) {
    try {
        SplitManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto r = j.at("ratios").get<std::vector<double>>();
        if (r.size() != 3) throw Error(Errc::invalid_header, "manifest ratios must have three entries");
        m.ratios = {r[0], r[1], r[2]};
        m.train = j.at("train").get<std::vector<std::size_t>>();
        m.pool = j.at("pool").get<std::vector<std::size_t>>();
        m.test = j.at("test").get<std::vector<std::size_t>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_header, std::string("manifest: ") + e.what());
    }
}

bool SplitManifest::operator==(const SplitManifest& o) const {
    return train == o.train && pool == o.pool && test == o.test && seed == o.seed && ratios.train == o.ratios.train &&
           ratios.pool == o.ratios.pool && ratios.test == o.ratios.test;
}

void save_manifest(const std::filesystem::path& path, const SplitManifest& manifest) {
    write_file(path, manifest.to_json().dump(2) + "\n");
}

SplitManifest load_manifest(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return SplitManifest::from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::invalid_header, std::string("manifest: ") + e.what());
    }
}

// --- cube / label files ---------------------------------------------------

std::string encode_cube(const HsiCube& cube) {
    const std::uint64_t count = checked_product({cube.rows, cube.cols, cube.bands});
    if (cube.data.size() != count) throw Error(Errc::shape_mismatch, "cube data length");
    std::string out;
    out.reserve(16 + 4 * count);
    out.append(cube_magic);
    detail::put_le<std::uint32_t>(out, cube.rows);
    detail::put_le<std::uint32_t>(out, cube.cols);
    detail::put_le<std::uint32_t>(out, cube.bands);
    for (float x : cube.data) detail::put_f32(out, x);
    return out;
}

HsiCube decode_cube(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.remaining() < 4 || in.take(4) != cube_magic) throw Error(Errc::bad_magic, "expected HSIC");
    const auto m = in.get_le<std::uint32_t>();
    const auto n = in.get_le<std::uint32_t>();
    const auto k = in.get_le<std::uint32_t>();
    const std::uint64_t count = checked_product({m, n, k});
    if (in.remaining() / 4 < count) throw Error(Errc::truncated, "cube payload shorter than header dimensions");
    std::vector<float> values(count);
    for (float& x : values) x = in.get_f32();
    if (in.remaining() != 0) throw Error(Errc::trailing_bytes, std::to_string(in.remaining()) + " bytes after payload");
    return HsiCube(m, n, k, std::move(values));
}

void save_cube(const std::filesystem::path& path, const HsiCube& cube) { write_file(path, encode_cube(cube)); }
HsiCube load_cube(const std::filesystem::path& path) { return decode_cube(read_file(path)); }

std::string encode_labels(const LabelMap& labels) {
    const std::uint64_t count = checked_product({labels.rows, labels.cols});
    if (labels.labels.size() != count) throw Error(Errc::shape_mismatch, "label data length");
    std::string out;
    out.reserve(12 + 2 * count);
    out.append(label_magic);
    detail::put_le<std::uint32_t>(out, labels.rows);
    detail::put_le<std::uint32_t>(out, labels.cols);
    for (auto l : labels.labels) detail::put_le<std::uint16_t>(out, l);
    return out;
}

LabelMap decode_labels(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.remaining() < 4 || in.take(4) != label_magic) throw Error(Errc::bad_magic, "expected HSIL");
    LabelMap map;
    map.rows = in.get_le<std::uint32_t>();
    map.cols = in.get_le<std::uint32_t>();
    const std::uint64_t count = checked_product({map.rows, map.cols});
    if (in.remaining() / 2 < count) throw Error(Errc::truncated, "label payload shorter than header dimensions");
    map.labels.resize(count);
    for (auto& l : map.labels) l = in.get_le<std::uint16_t>();
    if (in.remaining() != 0) throw Error(Errc::trailing_bytes, std::to_string(in.remaining()) + " bytes after payload");
    return map;
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) { write_file(path, encode_labels(labels)); }
LabelMap load_labels(const std::filesystem::path& path) { return decode_labels(read_file(path)); }

// --- windows --------------------------------------------------------------

std::size_t mirror_index(std::int64_t i, std::size_t n) {
    const auto period = static_cast<std::int64_t>(2 * n);
    std::int64_t r = i % period;
    if (r < 0) r += period;
    return static_cast<std::size_t>(r < static_cast<std::int64_t>(n) ? r : period - 1 - r);
}

PatchWindow extract_window(const HsiCube& cube, const LabelMap& labels, std::pair<std::size_t, std::size_t> center,
                           std::size_t window) {
    const auto [row, col] = center;
    if (labels.rows != cube.rows || labels.cols != cube.cols)
        throw Error(Errc::shape_mismatch, "label map and cube dimensions differ");
    if (row >= cube.rows || col >= cube.cols) throw Error(Errc::out_of_range, "window center outside the cube");
    if (window == 0 || window % 2 != 0) throw Error(Errc::invalid_argument, "window size must be even and positive");
    if (window > std::min(cube.rows, cube.cols))
        throw Error(Errc::invalid_argument, "window size " + std::to_string(window) + " exceeds cube extent");
    const auto label = labels.at(row, col);
    if (label == 0) throw Error(Errc::invalid_argument, "window center is unlabeled");

    PatchWindow w{row, col, window, cube.bands, {}, label};
    w.values.resize(window * window * cube.bands);
    const auto half = static_cast<std::int64_t>(window / 2);
    for (std::size_t i = 0; i < window; ++i) {
        const std::size_t r = mirror_index(static_cast<std::int64_t>(row) - half + static_cast<std::int64_t>(i), cube.rows);
        for (std::size_t j = 0; j < window; ++j) {
            const std::size_t c =
                mirror_index(static_cast<std::int64_t>(col) - half + static_cast<std::int64_t>(j), cube.cols);
            const auto pixel = cube.spectrum(r, c);
            std::copy(pixel.begin(), pixel.end(), w.values.begin() + static_cast<std::ptrdiff_t>((i * window + j) * cube.bands));
        }
    }
    return w;
}

std::vector<PatchWindow> extract_windows(const HsiCube& cube, const LabelMap& labels,
                                         std::span<const std::size_t> indices, std::size_t window) {
    std::vector<PatchWindow> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= cube.pixel_count()) throw Error(Errc::out_of_range, "pixel index " + std::to_string(idx));
        out.push_back(extract_window(cube, labels, {idx / cube.cols, idx % cube.cols}, window));
    }
    return out;
}

// --- split ----------------------------------------------------------------

SplitManifest make_split(const LabelMap& labels, SplitRatios ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.pool < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.pool + ratios.test - 1.0) > 1e-9)
        throw Error(Errc::invalid_argument, "split ratios must be nonnegative and sum to 1");
    labels.validate();
    const std::size_t classes = labels.class_count();
    std::vector<std::vector<std::size_t>> by_class(classes + 1);
    for (std::size_t i = 0; i < labels.labels.size(); ++i)
        if (labels.labels[i] != 0) by_class[labels.labels[i]].push_back(i);

    SplitManifest m;
    m.seed = seed;
    m.ratios = ratios;
    Rng rng(seed);
    for (std::size_t c = 1; c <= classes; ++c) {
        auto& members = by_class[c];
        const std::size_t n = members.size();
        if (n < 3)
            throw Error(Errc::invalid_argument,
                        "class " + std::to_string(c) + " has " + std::to_string(n) + " labeled pixels, need at least 3");
        rng.shuffle(members.begin(), members.end());
        auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
        auto n_pool = static_cast<std::size_t>(std::llround(ratios.pool * static_cast<double>(n)));
        n_train = std::clamp<std::size_t>(n_train, 1, n);
        n_pool = std::min(n_pool, n - n_train);
        auto it = members.begin();
        m.train.insert(m.train.end(), it, it + static_cast<std::ptrdiff_t>(n_train));
        it += static_cast<std::ptrdiff_t>(n_train);
        m.pool.insert(m.pool.end(), it, it + static_cast<std::ptrdiff_t>(n_pool));
        it += static_cast<std::ptrdiff_t>(n_pool);
        m.test.insert(m.test.end(), it, members.end());
    }
    std::sort(m.train.begin(), m.train.end());
    std::sort(m.pool.begin(), m.pool.end());
    std::sort(m.test.begin(), m.test.end());
    return m;
}

// --- synthetic data -------------------------------------------------------

std::vector<double> prototype_spectrum(std::size_t class_index, std::size_t classes, std::size_t bands,
                                       double domain_shift) {
    std::vector<double> out(bands);
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(class_index) / static_cast<double>(classes);
    for (std::size_t b = 0; b < bands; ++b)
        out[b] = std::sin(2.0 * std::numbers::pi * static_cast<double>(b) / static_cast<double>(bands) + phase +
                          domain_shift);
    return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> voronoi_sites(const SynthParams& params) {
    const std::uint64_t pixels = checked_product({params.rows, params.cols});
    if (params.classes < 2) throw Error(Errc::invalid_argument, "need at least two classes");
    if (params.classes > pixels) throw Error(Errc::invalid_argument, "more classes than pixels");
    if (params.classes > std::numeric_limits<std::uint16_t>::max())
        throw Error(Errc::invalid_argument, "class count exceeds the label format");
    Rng rng(derive_seed(params.seed, 1));
    // Distinct site pixels by rejection; C is tiny next to M*N in practice.
    std::set<std::uint64_t> taken;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> sites;
    while (sites.size() < params.classes) {
        const std::uint64_t idx = rng.below(pixels);
        if (!taken.insert(idx).second) continue;
        sites.emplace_back(static_cast<std::uint32_t>(idx / params.cols), static_cast<std::uint32_t>(idx % params.cols));
    }
    return sites;
}

std::pair<HsiCube, LabelMap> synth_cube(const SynthParams& params) {
    if (params.bands < params.classes) throw Error(Errc::invalid_argument, "need at least as many bands as classes");
    if (!(params.noise_sigma >= 0.0)) throw Error(Errc::invalid_argument, "noise sigma must be nonnegative");
    const auto sites = voronoi_sites(params);
    const std::size_t classes = params.classes;

    std::vector<std::vector<double>> prototypes;
    for (std::size_t c = 0; c < classes; ++c)
        prototypes.push_back(prototype_spectrum(c, classes, params.bands, params.domain_shift));

    LabelMap labels{params.rows, params.cols, std::vector<std::uint16_t>(std::size_t{params.rows} * params.cols)};
    std::vector<float> values(labels.pixel_count() * params.bands);
    Rng noise(derive_seed(params.seed, 2));
    for (std::uint32_t r = 0; r < params.rows; ++r) {
        for (std::uint32_t c = 0; c < params.cols; ++c) {
            std::size_t best = 0;
            std::int64_t best_d = std::numeric_limits<std::int64_t>::max();
            for (std::size_t s = 0; s < classes; ++s) {
                const std::int64_t dr = std::int64_t{r} - sites[s].first;
                const std::int64_t dc = std::int64_t{c} - sites[s].second;
                const std::int64_t d = dr * dr + dc * dc;
                if (d < best_d) {
                    best_d = d;
                    best = s;
                }
            }
            const std::size_t pixel = std::size_t{r} * params.cols + c;
            labels.labels[pixel] = static_cast<std::uint16_t>(best + 1);
            for (std::size_t b = 0; b < params.bands; ++b)
                values[pixel * params.bands + b] =
                    static_cast<float>(prototypes[best][b] + params.noise_sigma * noise.normal());
        }
    }
    return {HsiCube(params.rows, params.cols, params.bands, std::move(values)), std::move(labels)};
}

}  // namespace sstatl
