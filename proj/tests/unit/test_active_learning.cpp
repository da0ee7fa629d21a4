#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sstatl/active_learning.hpp"
#include "sstatl/errors.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/rng.hpp"
#include "sstatl/sst_model.hpp"

using namespace sstatl;

namespace {

Tensor random_probs(std::size_t n, std::size_t c, Rng& rng) {
    Tensor p({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < c; ++j) total += (p(i, j) = rng.uniform() + 1e-9);
        for (std::size_t j = 0; j < c; ++j) p(i, j) /= total;
    }
    return p;
}

HsiCube random_cube(std::uint32_t m, std::uint32_t n, std::uint32_t k, Rng& rng) {
    std::vector<float> v(std::size_t{m} * n * k);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return {m, n, k, std::move(v)};
}

// Mean pairwise distance over the 3x3 block, every ordered pair enumerated.
double brute_diversity(const HsiCube& cube, std::size_t row, std::size_t col) {
    std::vector<std::vector<double>> s;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
            auto r = static_cast<std::int64_t>(row) + dr, c = static_cast<std::int64_t>(col) + dc;
            r = r < 0 ? -1 - r : r >= cube.rows ? 2 * cube.rows - 1 - r : r;
            c = c < 0 ? -1 - c : c >= cube.cols ? 2 * cube.cols - 1 - c : c;
            const auto sp = cube.spectrum(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            s.emplace_back(sp.begin(), sp.end());
        }
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b) {
            if (a == b) continue;
            double d = 0;
            for (std::size_t k = 0; k < s[a].size(); ++k) d += (s[a][k] - s[b][k]) * (s[a][k] - s[b][k]);
            total += std::sqrt(d);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

void check_result(const QueryResult& r, std::span<const std::size_t> pool, std::size_t q) {
    CHECK(r.selected.size() == std::min(q, pool.size()));
    CHECK(r.uncertainty.size() == r.selected.size());
    CHECK(r.diversity.size() == r.selected.size());
    std::set<std::size_t> unique(r.selected.begin(), r.selected.end());
    CHECK(unique.size() == r.selected.size());
    for (std::size_t s : r.selected) CHECK(std::find(pool.begin(), pool.end(), s) != pool.end());
}

}  // namespace

TEST_CASE("uncertainty scores") {
    CHECK(uncertainty_scores(Tensor({1, 4}, 0.25))[0] == -0.25);
    CHECK(uncertainty_scores(Tensor::matrix(1, 3, {0, 1, 0}))[0] == -1.0);

    Rng rng(1);
    const Tensor p = random_probs(50, 5, rng);
    const auto u = uncertainty_scores(p);
    for (std::size_t i = 0; i < 50; ++i) CHECK(u[i] == -*std::max_element(p.row(i).begin(), p.row(i).end()));

    // column permutations leave every score unchanged
    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor q({50, 5});
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 5; ++j) q(i, perm[j]) = p(i, j);
    CHECK(uncertainty_scores(q) == u);
}

TEST_CASE("entropy and margin") {
    const Tensor onehot = Tensor::matrix(1, 3, {0, 0, 1});
    CHECK(entropy_scores(onehot)[0] == 0.0);
    CHECK(margin_scores(onehot)[0] == -1.0);
    const Tensor half({1, 2}, 0.5);
    CHECK(std::abs(entropy_scores(half)[0] - std::log(2.0)) < 1e-15);
    CHECK(margin_scores(half)[0] == 0.0);

    Rng rng(2);
    const Tensor p = random_probs(40, 6, rng);
    const auto e = entropy_scores(p);
    const auto m = margin_scores(p);
    for (std::size_t i = 0; i < 40; ++i) {
        double h = 0;
        for (double x : p.row(i)) h -= x * std::log(x);
        CHECK(std::abs(e[i] - h) < 1e-12);
        std::vector<double> row(p.row(i).begin(), p.row(i).end());
        std::sort(row.rbegin(), row.rend());
        CHECK(m[i] == -(row[0] - row[1]));
    }
    CHECK_THROWS_AS(margin_scores(Tensor({2, 1}, 1.0)), Error);
}

TEST_CASE("neighborhood diversity") {
    Rng rng(3);
    const HsiCube constant(5, 5, 4, std::vector<float>(100, 0.7f));
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) CHECK(neighborhood_diversity(constant, r, c, 3) == 0.0);

    SUBCASE("two spectra split 5 and 4") {
        const std::vector<float> a{1, 2, 3}, b{4, 6, 3};  // |a - b| = 5
        std::vector<float> v;
        for (int i = 0; i < 9; ++i) {
            const auto& s = (i % 2 == 0) ? a : b;  // five a's, four b's
            v.insert(v.end(), s.begin(), s.end());
        }
        const HsiCube cube(3, 3, 3, v);
        CHECK(std::abs(neighborhood_diversity(cube, 1, 1, 3) - 40.0 / 72.0 * 5.0) < 1e-12);
        CHECK(std::abs(brute_diversity(cube, 1, 1) - 40.0 / 72.0 * 5.0) < 1e-12);
    }

    SUBCASE("brute-force oracle, homogeneity, permutation invariance") {
        for (int trial = 0; trial < 100; ++trial) {
            const HsiCube cube = random_cube(6, 7, 5, rng);
            const std::size_t r = rng.below(6), c = rng.below(7);
            const double d = neighborhood_diversity(cube, r, c, 3);
            CHECK(std::abs(d - brute_diversity(cube, r, c)) < 1e-9);
            CHECK(d > 0.0);  // random spectra are never all identical

            // one differing band in one cell is enough to make it positive
            HsiCube nearly(cube.rows, cube.cols, cube.bands, std::vector<float>(cube.data.size(), 1.0f));
            nearly.data[(r * cube.cols + c) * cube.bands + rng.below(cube.bands)] = 1.5f;
            CHECK(neighborhood_diversity(nearly, r, c, 3) > 0.0);

            HsiCube scaled = cube;
            for (float& x : scaled.data) x *= 4.0f;  // power of two keeps float products exact
            CHECK(neighborhood_diversity(scaled, r, c, 3) == 4.0 * d);

            // shuffle the 3x3 block around an interior pixel
            const std::size_t ir = 1 + rng.below(4), ic = 1 + rng.below(5);
            HsiCube shuffled = cube;
            std::vector<std::size_t> cells(9);
            std::iota(cells.begin(), cells.end(), 0);
            rng.shuffle(cells.begin(), cells.end());
            for (std::size_t i = 0; i < 9; ++i) {
                const auto src = cube.spectrum(ir - 1 + cells[i] / 3, ic - 1 + cells[i] % 3);
                std::copy(src.begin(), src.end(),
                          shuffled.data.begin() + static_cast<std::ptrdiff_t>(((ir - 1 + i / 3) * 7 + ic - 1 + i % 3) * 5));
            }
            CHECK(std::abs(neighborhood_diversity(shuffled, ir, ic, 3) - neighborhood_diversity(cube, ir, ic, 3)) < 1e-12);
        }
    }
    CHECK(neighborhood_diversity(random_cube(4, 4, 2, rng), 1, 1, 1) == 0.0);
    CHECK_THROWS_AS(neighborhood_diversity(constant, 1, 1, 2), Error);
}

TEST_CASE("select top") {
    const std::vector<double> s{1, 3, 2};
    CHECK(select_top(s, 2) == std::vector<std::size_t>{1, 2});
    const std::vector<double> flat(6, 0.5);
    CHECK(select_top(flat, 3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(select_top(s, 10).size() == 3);

    // best k-subset under additive scoring, lexicographically smallest on ties
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(std::min<std::size_t>(3, n));
        std::vector<double> scores(n);
        for (double& x : scores) x = static_cast<double>(rng.below(5));  // small range forces ties
        double best = -INFINITY;
        std::vector<std::size_t> best_set;
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
            std::vector<std::size_t> set;
            double total = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (1u << i)) {
                    set.push_back(i);
                    total += scores[i];
                }
            if (total > best || (total == best && set < best_set)) {
                best = total;
                best_set = set;
            }
        }
        auto got = select_top(scores, k);
        for (std::size_t i = 1; i < got.size(); ++i) CHECK(scores[got[i - 1]] >= scores[got[i]]);
        std::sort(got.begin(), got.end());
        CHECK(got == best_set);
    }
}

TEST_CASE("query strategies") {
    Rng rng(5);
    const HsiCube cube = random_cube(10, 10, 4, rng);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < 100; i += 3) pool.push_back(i);
    const Tensor probs = random_probs(pool.size(), 4, rng);

    for (Strategy s : {Strategy::hybrid, Strategy::random, Strategy::entropy, Strategy::margin, Strategy::diversity_only})
        for (std::size_t q : {1, 5, 34, 50}) {
            CAPTURE(to_string(s));
            QueryConfig cfg;
            cfg.query_size = q;
            cfg.strategy = s;
            check_result(select_queries(probs, cube, pool, cfg, 9), pool, q);
        }

    SUBCASE("hybrid with a prefilter covering the pool is diversity only") {
        QueryConfig cfg;
        cfg.query_size = 7;
        cfg.beta = 1000;
        const auto h = select_queries(probs, cube, pool, cfg, 0);
        cfg.strategy = Strategy::diversity_only;
        CHECK(select_queries(probs, cube, pool, cfg, 0).selected == h.selected);
    }

    SUBCASE("hybrid with a 1x1 neighborhood is uncertainty order") {
        QueryConfig cfg;
        cfg.query_size = 6;
        cfg.neighborhood = 1;
        const auto h = select_queries(probs, cube, pool, cfg, 0);
        const auto u = uncertainty_scores(probs);
        std::vector<std::size_t> expected;
        for (std::size_t i : select_top(u, 6)) expected.push_back(pool[i]);
        CHECK(h.selected == expected);
    }

    SUBCASE("pixels that are both most uncertain and most diverse win") {
        // flat cube except three noisy spots; those spots are also the only
        // uncertain predictions
        std::vector<float> v(12 * 12 * 2, 1.0f);
        const std::vector<std::size_t> spots{26, 64, 101};
        for (std::size_t s : spots) {
            v[s * 2] = 9.0f;
            v[s * 2 + 1] = -9.0f;
        }
        const HsiCube c(12, 12, 2, v);
        std::vector<std::size_t> p(144);
        std::iota(p.begin(), p.end(), 0);
        Tensor pr({144, 2});
        for (std::size_t i = 0; i < 144; ++i) {
            const bool spot = std::find(spots.begin(), spots.end(), i) != spots.end();
            pr(i, 0) = spot ? 0.5 : 0.95;
            pr(i, 1) = 1 - pr(i, 0);
        }
        QueryConfig cfg;
        cfg.query_size = 3;
        cfg.beta = 2;  // the prefilter also admits three confident pixels
        auto got = select_queries(pr, c, p, cfg, 0).selected;
        std::sort(got.begin(), got.end());
        CHECK(got == spots);
    }

    SUBCASE("random is seeded") {
        QueryConfig cfg;
        cfg.query_size = 5;
        cfg.strategy = Strategy::random;
        CHECK(select_queries(probs, cube, pool, cfg, 1).selected == select_queries(probs, cube, pool, cfg, 1).selected);
        CHECK(select_queries(probs, cube, pool, cfg, 1).selected != select_queries(probs, cube, pool, cfg, 2).selected);
    }

    SUBCASE("config validation") {
        QueryConfig cfg;
        cfg.query_size = 0;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg = {};
        cfg.neighborhood = 4;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg = {};
        cfg.beta = 0.5;
        CHECK_THROWS_AS(cfg.validate(), Error);
        CHECK(parse_strategy("diversity_only") == Strategy::diversity_only);
        CHECK_FALSE(parse_strategy("greedy"));
    }
}

TEST_CASE("round bookkeeping") {
    std::vector<std::size_t> train(75), pool(5000);
    std::iota(train.begin(), train.end(), 0);
    std::iota(pool.begin(), pool.end(), 75);
    std::vector<std::size_t> queried(pool.begin() + 100, pool.begin() + 248);
    const auto [t1, p1] = al_round(train, pool, queried);
    CHECK(t1.size() == 223);
    CHECK(p1.size() == 5000 - 148);

    const auto [t0, p0] = al_round(train, pool, {});
    CHECK(t0 == train);
    CHECK(p0 == pool);

    const std::vector<std::size_t> outside{3};
    CHECK_THROWS_AS(al_round(train, pool, outside), Error);
    const std::vector<std::size_t> twice{80, 80};
    CHECK_THROWS_AS(al_round(train, pool, twice), Error);
}

TEST_CASE("six rounds with a model keep the sets disjoint") {
    SynthParams sp;
    sp.classes = 3;
    sp.rows = 16;
    sp.cols = 16;
    sp.bands = 6;
    sp.noise_sigma = 0.2;
    sp.seed = 3;
    const auto [cube, labels] = synth_cube(sp);
    SstConfig mc;
    mc.window = 4;
    mc.bands = 6;
    mc.d_model = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.classes = 3;
    const SstModel model(mc, 1);
    const SplitManifest split = make_split(labels, {0.05, 0.45, 0.5}, 2);

    for (Strategy s : {Strategy::hybrid, Strategy::random, Strategy::entropy, Strategy::margin, Strategy::diversity_only}) {
        CAPTURE(to_string(s));
        auto train = split.train;
        auto pool = split.pool;
        const std::size_t total = train.size() + pool.size();
        QueryConfig cfg;
        cfg.query_size = 15;
        cfg.strategy = s;
        for (int round = 1; round <= 6; ++round) {
            const QueryResult r = run_query(model, cube, labels, pool, cfg, static_cast<std::uint64_t>(round));
            check_result(r, pool, cfg.query_size);
            std::tie(train, pool) = al_round(train, pool, r.selected);
            CHECK(train.size() + pool.size() == total);
            std::vector<std::size_t> a = train, b = pool;
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            std::vector<std::size_t> both;
            std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
            CHECK(both.empty());
            for (std::size_t t : split.test) CHECK_FALSE(std::binary_search(a.begin(), a.end(), t));
        }
    }
    QueryConfig cfg;
    cfg.query_size = 4;
    const QueryResult h = hybrid_query(model, cube, labels, split.pool, cfg);
    check_result(h, split.pool, 4);
}

TEST_CASE("round record json") {
    RoundRecord r;
    r.round = 2;
    r.strategy = Strategy::margin;
    r.train_size = 40;
    r.queried = {5, 9};
    r.oa = 0.5;
    const auto j = r.to_json();
    for (const char* key : {"round", "strategy", "train_size", "queried_indices", "oa", "aa", "kappa", "wall_seconds"})
        CHECK(j.contains(key));
    const RoundRecord back = RoundRecord::from_json(j);
    CHECK(back.to_json() == j);
}
