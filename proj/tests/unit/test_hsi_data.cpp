#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "doctest.h"
#include "sstatl/checkpoint.hpp"
#include "sstatl/errors.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/rng.hpp"

using namespace sstatl;

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_float(std::string& s, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(s, bits);
}

std::string cube_bytes(std::uint32_t m, std::uint32_t n, std::uint32_t k, const std::vector<float>& values) {
    std::string s = "HSIC";
    put_u32(s, m);
    put_u32(s, n);
    put_u32(s, k);
    for (float v : values) put_float(s, v);
    return s;
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::io;
}

// Reflection by repeated folding, independent of the modular form.
std::size_t fold(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
    return static_cast<std::size_t>(i);
}

HsiCube random_cube(std::uint32_t m, std::uint32_t n, std::uint32_t k, Rng& rng) {
    std::vector<float> v(std::size_t{m} * n * k);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return {m, n, k, std::move(v)};
}

LabelMap full_labels(std::uint32_t m, std::uint32_t n, std::uint16_t classes) {
    LabelMap l{m, n, std::vector<std::uint16_t>(std::size_t{m} * n)};
    for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::uint16_t>(1 + i % classes);
    return l;
}

}  // namespace

TEST_CASE("cube file readback") {
    const HsiCube cube = decode_cube(cube_bytes(2, 2, 1, {1, 2, 3, 4}));
    CHECK(cube.rows == 2);
    CHECK(cube.cols == 2);
    CHECK(cube.bands == 1);
    CHECK(cube.data == std::vector<float>{1, 2, 3, 4});

    std::string bad = cube_bytes(2, 2, 1, {1, 2, 3, 4});
    bad.replace(0, 4, "XXXX");
    CHECK(code_of([&] { decode_cube(bad); }) == Errc::bad_magic);
    CHECK(code_of([&] { decode_cube(cube_bytes(2, 2, 1, {1, 2, 3})); }) == Errc::truncated);
    CHECK(code_of([&] { decode_cube(cube_bytes(2, 2, 1, {1, 2, 3, 4, 5})); }) == Errc::trailing_bytes);
    CHECK(code_of([&] { decode_cube(cube_bytes(2, 2, 1, {1, NAN, 3, 4})); }) == Errc::non_finite);
    CHECK(code_of([&] { decode_cube(cube_bytes(2, 2, 1, {1, INFINITY, 3, 4})); }) == Errc::non_finite);
    CHECK(code_of([&] { decode_cube(cube_bytes(0, 2, 1, {})); }) == Errc::invalid_header);
    CHECK(code_of([&] { decode_cube(cube_bytes(0xffffffffu, 0xffffffffu, 0xffffu, {})); }) == Errc::dimension_overflow);
    CHECK(code_of([&] { decode_cube("HSI"); }) == Errc::bad_magic);
}

TEST_CASE("binary round trips are byte identical") {
    Rng rng(1);
    const auto dir = std::filesystem::temp_directory_path() / "sstatl_hsi_test";
    std::filesystem::create_directories(dir);
    for (int trial = 0; trial < 25; ++trial) {
        const auto m = static_cast<std::uint32_t>(1 + rng.below(9));
        const auto n = static_cast<std::uint32_t>(1 + rng.below(9));
        const auto k = static_cast<std::uint32_t>(1 + rng.below(6));
        std::vector<float> v(std::size_t{m} * n * k);
        for (float& x : v) x = static_cast<float>(rng.uniform(-1e6, 1e6));
        const std::string original = cube_bytes(m, n, k, v);
        write_file(dir / "a.hsic", original);
        save_cube(dir / "b.hsic", load_cube(dir / "a.hsic"));
        CHECK(read_file(dir / "b.hsic") == original);

        LabelMap labels{m, n, std::vector<std::uint16_t>(std::size_t{m} * n)};
        for (auto& l : labels.labels) l = static_cast<std::uint16_t>(rng.below(65536));
        save_labels(dir / "a.hsil", labels);
        const std::string lbytes = read_file(dir / "a.hsil");
        CHECK(lbytes.substr(0, 4) == "HSIL");
        CHECK(lbytes.size() == 12 + 2 * labels.labels.size());
        save_labels(dir / "b.hsil", load_labels(dir / "a.hsil"));
        CHECK(read_file(dir / "b.hsil") == lbytes);
    }
    LabelMap l = full_labels(4, 5, 3);
    const SplitManifest split = make_split(l, {0.2, 0.3, 0.5}, 9);
    save_manifest(dir / "m.json", split);
    CHECK(load_manifest(dir / "m.json") == split);
    std::filesystem::remove_all(dir);
}

TEST_CASE("label validation") {
    LabelMap l = full_labels(3, 3, 3);
    CHECK_NOTHROW(l.validate());
    CHECK(l.class_count() == 3);
    l.labels[2] = 0;
    l.labels[5] = 0;
    l.labels[8] = 0;  // class 3 gone, still contiguous
    CHECK_NOTHROW(l.validate());
    l.labels[0] = 4;  // gap at 3
    CHECK_THROWS_AS(l.validate(), Error);
}

TEST_CASE("mirror index") {
    for (std::int64_t n = 1; n <= 9; ++n)
        for (std::int64_t i = -30; i < 30; ++i) CHECK(mirror_index(i, static_cast<std::size_t>(n)) == fold(i, n));
}

TEST_CASE("window extraction") {
    Rng rng(2);
    SUBCASE("constant cube") {
        const HsiCube cube(6, 7, 3, std::vector<float>(6 * 7 * 3, 2.5f));
        const LabelMap labels = full_labels(6, 7, 2);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t c = 0; c < 7; ++c)
                for (float v : extract_window(cube, labels, {r, c}, 4).values) CHECK(v == 2.5f);
    }
    SUBCASE("corner of an 8x8 cube against a padding oracle") {
        const HsiCube cube = random_cube(8, 8, 3, rng);
        const LabelMap labels = full_labels(8, 8, 2);
        const PatchWindow w = extract_window(cube, labels, {0, 0}, 8);
        CHECK(w.size == 8);
        CHECK(w.label == labels.at(0, 0));
        for (std::int64_t i = 0; i < 8; ++i)
            for (std::int64_t j = 0; j < 8; ++j)
                for (std::size_t b = 0; b < 3; ++b)
                    CHECK(w.values[(i * 8 + j) * 3 + b] == cube.at(fold(i - 4, 8), fold(j - 4, 8), b));
    }
    SUBCASE("W = 2 covers rows r-1..r and cols c-1..c") {
        const HsiCube cube = random_cube(5, 5, 2, rng);
        const LabelMap labels = full_labels(5, 5, 2);
        const PatchWindow w = extract_window(cube, labels, {3, 2}, 2);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t b = 0; b < 2; ++b) CHECK(w.values[(i * 2 + j) * 2 + b] == cube.at(2 + i, 1 + j, b));
    }
    SUBCASE("interior windows equal direct slicing") {
        const HsiCube cube = random_cube(12, 11, 2, rng);
        const LabelMap labels = full_labels(12, 11, 3);
        for (std::size_t r = 3; r + 3 <= 12; ++r)
            for (std::size_t c = 3; c + 3 <= 11; ++c) {
                const PatchWindow w = extract_window(cube, labels, {r, c}, 6);
                bool same = true;
                for (std::size_t i = 0; i < 6; ++i)
                    for (std::size_t j = 0; j < 6; ++j)
                        for (std::size_t b = 0; b < 2; ++b)
                            same = same && w.values[(i * 6 + j) * 2 + b] == cube.at(r - 3 + i, c - 3 + j, b);
                CHECK(same);
            }
    }
    SUBCASE("rejections") {
        const HsiCube cube = random_cube(4, 4, 1, rng);
        LabelMap labels = full_labels(4, 4, 2);
        CHECK_THROWS_AS(extract_window(cube, labels, {0, 0}, 3), Error);
        CHECK_THROWS_AS(extract_window(cube, labels, {0, 0}, 6), Error);
        CHECK_THROWS_AS(extract_window(cube, labels, {4, 0}, 2), Error);
        labels.labels[5] = 0;
        CHECK_THROWS_AS(extract_window(cube, labels, {1, 1}, 2), Error);
    }
}

TEST_CASE("split") {
    LabelMap one{10, 10, std::vector<std::uint16_t>(100, 1)};
    const SplitManifest s = make_split(one, {}, 3);
    CHECK(s.train.size() == 1);
    CHECK(s.pool.size() == 49);
    CHECK(s.test.size() == 50);
    CHECK(make_split(one, {}, 3) == s);
    CHECK_FALSE(make_split(one, {}, 4) == s);

    const SplitManifest all = make_split(one, {1, 0, 0}, 3);
    CHECK(all.train.size() == 100);
    CHECK(all.pool.empty());
    CHECK(all.test.empty());

    CHECK_THROWS_AS(make_split(one, {0.5, 0.2, 0.2}, 0), Error);

    SUBCASE("partition property") {
        Rng rng(4);
        for (int trial = 0; trial < 30; ++trial) {
            const auto m = static_cast<std::uint32_t>(5 + rng.below(10));
            const auto n = static_cast<std::uint32_t>(5 + rng.below(10));
            const std::size_t classes = 1 + rng.below(4);
            LabelMap l{m, n, std::vector<std::uint16_t>(std::size_t{m} * n)};
            for (std::size_t i = 0; i < l.labels.size(); ++i)
                l.labels[i] = rng.below(4) == 0 ? 0 : static_cast<std::uint16_t>(1 + i % classes);
            const double t = rng.uniform(0, 0.3), p = rng.uniform(0, 0.5);
            const SplitManifest sp = make_split(l, {t, p, 1 - t - p}, trial);
            std::vector<std::size_t> all_idx;
            for (const auto* part : {&sp.train, &sp.pool, &sp.test}) all_idx.insert(all_idx.end(), part->begin(), part->end());
            std::sort(all_idx.begin(), all_idx.end());
            CHECK(all_idx == l.labeled_indices());  // disjoint and covering
            std::set<std::uint16_t> train_classes;
            for (std::size_t i : sp.train) train_classes.insert(l.labels[i]);
            CHECK(train_classes.size() == classes);
        }
    }
}

TEST_CASE("synthetic cube") {
    SynthParams p;
    p.classes = 5;
    p.rows = 20;
    p.cols = 17;
    p.bands = 12;
    p.seed = 42;

    SUBCASE("noise free pixels equal their prototype") {
        const auto [cube, labels] = synth_cube(p);
        CHECK(cube.data.size() == 20u * 17 * 12);
        for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
            const std::uint16_t c = labels.labels[i];
            REQUIRE(c >= 1);
            REQUIRE(c <= 5);
            const auto proto = prototype_spectrum(c - 1, 5, 12, 0.0);
            const auto pixel = cube.spectrum(i);
            for (std::size_t b = 0; b < 12; ++b) CHECK(pixel[b] == static_cast<float>(proto[b]));
        }
        CHECK_NOTHROW(labels.validate());
        CHECK(labels.class_count() == 5);
    }

    SUBCASE("label histogram matches a Voronoi recount") {
        p.noise_sigma = 0.4;
        const auto [cube, labels] = synth_cube(p);
        const auto sites = voronoi_sites(p);
        std::map<std::size_t, std::size_t> expected, actual;
        for (std::size_t r = 0; r < p.rows; ++r)
            for (std::size_t c = 0; c < p.cols; ++c) {
                double best = INFINITY;
                std::size_t owner = 0;
                for (std::size_t s = 0; s < sites.size(); ++s) {
                    const double dr = double(r) - sites[s].first, dc = double(c) - sites[s].second;
                    const double d = dr * dr + dc * dc;
                    if (d < best) {
                        best = d;
                        owner = s + 1;
                    }
                }
                ++expected[owner];
                ++actual[labels.at(r, c)];
            }
        CHECK(actual == expected);
    }

    SUBCASE("same seed gives same cube, noise is seeded") {
        p.noise_sigma = 0.3;
        CHECK(synth_cube(p) == synth_cube(p));
        SynthParams q = p;
        q.seed = 43;
        CHECK_FALSE(synth_cube(q).first == synth_cube(p).first);
    }

    SUBCASE("phase shift of pi moves class means by the closed-form distance") {
        SynthParams shifted = p;
        shifted.domain_shift = std::numbers::pi;
        const auto [a, la] = synth_cube(p);
        const auto [b, lb] = synth_cube(shifted);
        CHECK(la == lb);
        // sin(x + pi) = -sin(x), and over k >= 3 equally spaced phases the sum
        // of sin^2 is k / 2, so each class moves by 2 * sqrt(k / 2).
        const double closed_form = 2.0 * std::sqrt(12.0 / 2.0);
        double total = 0;
        for (std::size_t c = 1; c <= 5; ++c) {
            std::vector<double> ma(12), mb(12);
            std::size_t count = 0;
            for (std::size_t i = 0; i < la.pixel_count(); ++i) {
                if (la.labels[i] != c) continue;
                ++count;
                for (std::size_t k = 0; k < 12; ++k) {
                    ma[k] += a.spectrum(i)[k];
                    mb[k] += b.spectrum(i)[k];
                }
            }
            double d2 = 0;
            for (std::size_t k = 0; k < 12; ++k) d2 += std::pow((ma[k] - mb[k]) / count, 2);
            CHECK(std::abs(std::sqrt(d2) - closed_form) < 1e-5);
            total += std::sqrt(d2);
        }
        CHECK(std::abs(total / 5 - closed_form) < 1e-5);
    }

    SUBCASE("noise free data is nearest-prototype separable") {
        const auto [cube, labels] = synth_cube(p);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
            double best = INFINITY;
            std::size_t arg = 0;
            for (std::size_t c = 0; c < 5; ++c) {
                const auto proto = prototype_spectrum(c, 5, 12, 0.0);
                double d = 0;
                for (std::size_t k = 0; k < 12; ++k) d += std::pow(cube.spectrum(i)[k] - proto[k], 2);
                if (d < best) {
                    best = d;
                    arg = c + 1;
                }
            }
            correct += arg == labels.labels[i];
        }
        CHECK(correct == labels.pixel_count());
    }

    SUBCASE("invalid parameters") {
        SynthParams bad = p;
        bad.classes = 0;
        CHECK_THROWS_AS(synth_cube(bad), Error);
        bad = p;
        bad.noise_sigma = -1;
        CHECK_THROWS_AS(synth_cube(bad), Error);
    }
}
