#include "sstatl/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "sstatl/errors.hpp"
#include "sstatl/rng.hpp"
#include "sstatl/trainer.hpp"

namespace sstatl {

std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::hybrid: return "hybrid";
    case Strategy::random: return "random";
    case Strategy::entropy: return "entropy";
    case Strategy::margin: return "margin";
    case Strategy::diversity_only: return "diversity_only";
    }
    return "hybrid";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (Strategy s : {Strategy::hybrid, Strategy::random, Strategy::entropy, Strategy::margin, Strategy::diversity_only})
        if (to_string(s) == name) return s;
    return std::nullopt;
}

void QueryConfig::validate() const {
    if (query_size < 1) throw Error(Errc::invalid_argument, "query size must be at least 1");
    if (neighborhood < 1 || neighborhood % 2 == 0) throw Error(Errc::invalid_argument, "neighborhood must be odd");
    if (!(beta >= 1.0)) throw Error(Errc::invalid_argument, "beta must be at least 1");
}

namespace {

void check_distributions(const Tensor& probs) {
    if (probs.rank() != 2 || probs.rows() == 0) throw Error(Errc::invalid_argument, "empty probability matrix");
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double total = 0.0;
        for (double p : probs.row(i)) total += p;
        if (std::abs(total - 1.0) > 1e-6)
            throw Error(Errc::invalid_argument, "probability row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
}

}  // namespace

std::vector<double> uncertainty_scores(const Tensor& probs) {
    check_distributions(probs);
    std::vector<double> out(probs.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto row = probs.row(i);
        out[i] = -*std::max_element(row.begin(), row.end());
    }
    return out;
}

std::vector<double> entropy_scores(const Tensor& probs) {
    check_distributions(probs);
    std::vector<double> out(probs.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double h = 0.0;
        for (double p : probs.row(i))
            if (p > 0.0) h -= p * std::log(p);
        out[i] = h;
    }
    return out;
}

std::vector<double> margin_scores(const Tensor& probs) {
    check_distributions(probs);
    if (probs.cols() < 2) throw Error(Errc::invalid_argument, "margin needs at least two classes");
    std::vector<double> out(probs.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double first = -1.0, second = -1.0;
        for (double p : probs.row(i)) {
            if (p > first) {
                second = first;
                first = p;
            } else if (p > second) {
                second = p;
            }
        }
        out[i] = -(first - second);
    }
    return out;
}

double neighborhood_diversity(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t n) {
    if (n == 0 || n % 2 == 0) throw Error(Errc::invalid_argument, "neighborhood size must be odd");
    if (row >= cube.rows || col >= cube.cols) throw Error(Errc::out_of_range, "pixel outside the cube");
    if (n == 1) return 0.0;
    const auto half = static_cast<std::int64_t>(n / 2);
    std::vector<std::span<const float>> spectra;
    spectra.reserve(n * n);
    for (std::int64_t dr = -half; dr <= half; ++dr)
        for (std::int64_t dc = -half; dc <= half; ++dc)
            spectra.push_back(cube.spectrum(mirror_index(static_cast<std::int64_t>(row) + dr, cube.rows),
                                            mirror_index(static_cast<std::int64_t>(col) + dc, cube.cols)));
    const std::size_t m = spectra.size();
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = j + 1; k < m; ++k) {
            double sq = 0.0;
            for (std::size_t b = 0; b < cube.bands; ++b) {
                const double d = static_cast<double>(spectra[j][b]) - static_cast<double>(spectra[k][b]);
                sq += d * d;
            }
            total += std::sqrt(sq);
        }
    // each unordered pair appears twice in the ordered sum
    return 2.0 * total / static_cast<double>(m * (m - 1));
}

std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t count) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(count, order.size()));
    return order;
}

QueryResult select_queries(const Tensor& probs, const HsiCube& cube, std::span<const std::size_t> pool,
                           const QueryConfig& config, std::uint64_t seed) {
    config.validate();
    if (pool.empty()) throw Error(Errc::invalid_argument, "query from an empty pool");
    if (probs.rows() != pool.size())
        throw Error(Errc::shape_mismatch, "probability rows do not match the pool size");
    const auto uncertainty = uncertainty_scores(probs);
    const std::size_t take = std::min(config.query_size, pool.size());
    auto diversity_of = [&](std::size_t i) {
        const std::size_t pixel = pool[i];
        return neighborhood_diversity(cube, pixel / cube.cols, pixel % cube.cols, config.neighborhood);
    };

    std::vector<std::size_t> chosen;  // positions in the pool
    switch (config.strategy) {
    case Strategy::random: {
        chosen.resize(pool.size());
        std::iota(chosen.begin(), chosen.end(), 0);
        Rng rng(seed);
        rng.shuffle(chosen.begin(), chosen.end());
        chosen.resize(take);
        break;
    }
    case Strategy::entropy: chosen = select_top(entropy_scores(probs), take); break;
    case Strategy::margin: chosen = select_top(margin_scores(probs), take); break;
    case Strategy::diversity_only: {
        std::vector<double> div(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) div[i] = diversity_of(i);
        chosen = select_top(div, take);
        break;
    }
    case Strategy::hybrid: {
        const double keep = std::min(config.beta * static_cast<double>(config.query_size), static_cast<double>(pool.size()));
        const auto candidates = select_top(uncertainty, static_cast<std::size_t>(keep));
        std::vector<double> div(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) div[i] = diversity_of(candidates[i]);
        for (std::size_t pick : select_top(div, take)) chosen.push_back(candidates[pick]);
        break;
    }
    }

    QueryResult result;
    for (std::size_t pos : chosen) {
        result.selected.push_back(pool[pos]);
        result.uncertainty.push_back(uncertainty[pos]);
        result.diversity.push_back(diversity_of(pos));
    }
    return result;
}

namespace {
Tensor pool_probabilities(const SstModel& model, const HsiCube& cube, const LabelMap& labels,
                          std::span<const std::size_t> pool) {
    // Chunked so the whole pool's windows never sit in memory at once.
    const std::size_t chunk = 512;
    const std::size_t classes = model.config().classes;
    Tensor probs({pool.size(), classes});
    for (std::size_t start = 0; start < pool.size(); start += chunk) {
        const auto part = pool.subspan(start, std::min(chunk, pool.size() - start));
        const auto windows = extract_windows(cube, labels, part, model.config().window);
        const Tensor p = predict_proba(model, windows);
        std::copy(p.data.begin(), p.data.end(), probs.data.begin() + static_cast<std::ptrdiff_t>(start * classes));
    }
    return probs;
}
}  // namespace

QueryResult hybrid_query(const SstModel& model, const HsiCube& cube, const LabelMap& labels,
                         std::span<const std::size_t> pool, const QueryConfig& config) {
    QueryConfig hybrid = config;
    hybrid.strategy = Strategy::hybrid;
    return run_query(model, cube, labels, pool, hybrid, 0);
}

QueryResult run_query(const SstModel& model, const HsiCube& cube, const LabelMap& labels,
                      std::span<const std::size_t> pool, const QueryConfig& config, std::uint64_t seed) {
    config.validate();
    if (pool.empty()) throw Error(Errc::invalid_argument, "query from an empty pool");
    if (config.strategy == Strategy::random || config.strategy == Strategy::diversity_only) {
        // Model-free strategies; uniform placeholder rows keep the shared path.
        const std::size_t classes = model.config().classes;
        Tensor probs({pool.size(), classes}, 1.0 / static_cast<double>(classes));
        return select_queries(probs, cube, pool, config, seed);
    }
    return select_queries(pool_probabilities(model, cube, labels, pool), cube, pool, config, seed);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> al_round(std::span<const std::size_t> train,
                                                                       std::span<const std::size_t> pool,
                                                                       std::span<const std::size_t> queried) {
    std::unordered_set<std::size_t> in_pool(pool.begin(), pool.end());
    std::unordered_set<std::size_t> taken;
    for (std::size_t q : queried) {
        if (!in_pool.contains(q)) throw Error(Errc::invalid_argument, "queried index " + std::to_string(q) + " is not in the pool");
        if (!taken.insert(q).second) throw Error(Errc::invalid_argument, "index " + std::to_string(q) + " queried twice");
    }
    std::vector<std::size_t> new_train(train.begin(), train.end());
    new_train.insert(new_train.end(), queried.begin(), queried.end());
    std::vector<std::size_t> new_pool;
    new_pool.reserve(pool.size() - queried.size());
    for (std::size_t p : pool)
        if (!taken.contains(p)) new_pool.push_back(p);
    return {std::move(new_train), std::move(new_pool)};
}

nlohmann::json RoundRecord::to_json() const {
    return {{"round", round},        {"strategy", std::string(to_string(strategy))},
            {"train_size", train_size}, {"queried_indices", queried},
            {"oa", oa},              {"aa", aa},
            {"kappa", kappa},        {"wall_seconds", wall_seconds}};
}

RoundRecord RoundRecord::from_json(const nlohmann::json& j) {
    RoundRecord r;
    r.round = j.at("round").get<std::size_t>();
    const auto s = parse_strategy(j.at("strategy").get<std::string>());
    if (!s) throw Error(Errc::invalid_header, "unknown strategy in round log");
    r.strategy = *s;
    r.train_size = j.at("train_size").get<std::size_t>();
    r.queried = j.at("queried_indices").get<std::vector<std::size_t>>();
    r.oa = j.at("oa").get<double>();
    r.aa = j.at("aa").get<double>();
    r.kappa = j.at("kappa").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
}

}  // namespace sstatl
