#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/sst_model.hpp"
#include "sstatl/tensor.hpp"

namespace sstatl {

enum class Strategy { hybrid, random, entropy, margin, diversity_only };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

struct QueryConfig {
    std::size_t query_size = 1;
    std::size_t neighborhood = 3;  // odd
    double beta = 5.0;             // uncertainty prefilter keeps beta * query_size
    Strategy strategy = Strategy::hybrid;

    void validate() const;
};

/// One round's selection. `selected` holds pool pixel indices in selection
/// order; the score vectors are aligned with it.
struct QueryResult {
    std::vector<std::size_t> selected;
    std::vector<double> uncertainty;
    std::vector<double> diversity;
};

/// -max_c p(c|x) per row; higher is more uncertain.
std::vector<double> uncertainty_scores(const Tensor& probs);
/// Shannon entropy -sum p ln p per row.
std::vector<double> entropy_scores(const Tensor& probs);
/// -(p_(1) - p_(2)) per row; needs at least two classes.
std::vector<double> margin_scores(const Tensor& probs);

/// Mean pairwise Euclidean distance among the n*n spectra around (row, col),
/// mirror-padded at the borders; 0 when n = 1.
double neighborhood_diversity(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t n);

/// Indices of the `count` highest scores, highest first; ties go to the lower
/// index.
std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t count);

/// Selection from precomputed pool probabilities. `probs` row i belongs to
/// pool[i]. `seed` drives the random strategy only.
QueryResult select_queries(const Tensor& probs, const HsiCube& cube, std::span<const std::size_t> pool,
                           const QueryConfig& config, std::uint64_t seed);

/// Hybrid selection: keep the min(beta * query_size, |pool|) most uncertain
/// candidates (ordered by uncertainty), then take the query_size most diverse.
QueryResult hybrid_query(const SstModel& model, const HsiCube& cube, const LabelMap& labels,
                         std::span<const std::size_t> pool, const QueryConfig& config);

/// Scores the pool with `model` and applies the configured strategy.
QueryResult run_query(const SstModel& model, const HsiCube& cube, const LabelMap& labels,
                      std::span<const std::size_t> pool, const QueryConfig& config, std::uint64_t seed);

/// Moves `queried` from the pool into the training set.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> al_round(std::span<const std::size_t> train,
                                                                       std::span<const std::size_t> pool,
                                                                       std::span<const std::size_t> queried);

struct RoundRecord {
    std::size_t round = 0;
    Strategy strategy = Strategy::hybrid;
    std::size_t train_size = 0;
    std::vector<std::size_t> queried;
    double oa = 0.0, aa = 0.0, kappa = 0.0;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
    static RoundRecord from_json(const nlohmann::json& j);
};

}  // namespace sstatl
