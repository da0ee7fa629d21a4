#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "sstatl/checkpoint.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sstatl;

namespace {

struct Scratch {
    fs::path dir;
    Scratch() : dir(fs::temp_directory_path() / ("sstatl_cli_" + std::to_string(std::random_device{}()))) {
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

// Runs the CLI with stdout and stderr captured in files; returns the exit code.
int run(const Scratch& s, const std::string& args) {
    const std::string cmd = std::string(SST_ATL_BIN) + " " + args + " > " + (s / "stdout") + " 2> " + (s / "stderr");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) { return read_file(path); }

// Small model and schedule so every command finishes quickly.
std::string small_config(const Scratch& s) {
    const nlohmann::json j = {
        {"model", {{"window", 4}, {"subpatch", 2}, {"d_model", 8}, {"layers", 2}, {"heads", 2}}},
        {"epochs", 2},
        {"batch_size", 16},
        {"ratios", {0.05, 0.45, 0.5}},
        {"query", {{"query_size", 4}}},
        {"rounds", 2},
        {"mmd", {{"sample_count", 16}}}};
    write_file(s / "config.json", j.dump());
    return s / "config.json";
}

std::string synth(const Scratch& s, const std::string& stem, const std::string& extra = "") {
    REQUIRE(run(s, "synth --classes 3 --size 16x16x6 --noise 0.2 --seed 5 --out " + (s / stem) + " " + extra) == 0);
    return "--cube " + (s / (stem + ".hsic")) + " --labels " + (s / (stem + ".hsil"));
}

}  // namespace

TEST_CASE("synth is deterministic") {
    Scratch s;
    REQUIRE(run(s, "synth --classes 3 --size 32x32x16 --seed 7 --out " + (s / "a")) == 0);
    REQUIRE(run(s, "synth --classes 3 --size 32x32x16 --seed 7 --out " + (s / "b")) == 0);
    CHECK(slurp(s / "a.hsic") == slurp(s / "b.hsic"));
    CHECK(slurp(s / "a.hsil") == slurp(s / "b.hsil"));
    CHECK(slurp(s / "stdout").find("32x32x16") != std::string::npos);

    REQUIRE(run(s, "synth --classes 3 --size 32x32x16 --seed 8 --out " + (s / "c")) == 0);
    CHECK(slurp(s / "a.hsil") != slurp(s / "c.hsil"));

    const HsiCube cube = load_cube(s / "a.hsic");
    CHECK(cube.rows == 32);
    CHECK(cube.cols == 32);
    CHECK(cube.bands == 16);
}

TEST_CASE("synth label histogram matches the Voronoi cell areas") {
    Scratch s;
    REQUIRE(run(s, "synth --classes 5 --size 24x20x8 --seed 11 --out " + (s / "v")) == 0);
    const LabelMap labels = load_labels(s / "v.hsil");

    SynthParams p;
    p.classes = 5;
    p.rows = 24;
    p.cols = 20;
    p.bands = 8;
    p.seed = 11;
    const auto sites = voronoi_sites(p);
    std::map<std::uint16_t, std::size_t> expected, actual;
    for (std::uint32_t r = 0; r < 24; ++r)
        for (std::uint32_t c = 0; c < 20; ++c) {
            std::size_t best = 0;
            std::int64_t best_d = -1;
            for (std::size_t k = 0; k < sites.size(); ++k) {
                const std::int64_t dr = std::int64_t{r} - sites[k].first, dc = std::int64_t{c} - sites[k].second;
                const std::int64_t d = dr * dr + dc * dc;
                if (best_d < 0 || d < best_d) best = k, best_d = d;
            }
            ++expected[static_cast<std::uint16_t>(best + 1)];
        }
    for (std::uint16_t l : labels.labels) ++actual[l];
    CHECK(actual == expected);
}

TEST_CASE("usage and data errors map to exit codes") {
    Scratch s;
    CHECK(run(s, "synth --classes 0 --out " + (s / "x")) == 1);
    CHECK(run(s, "synth --size 4by4 --out " + (s / "x")) == 1);
    CHECK(run(s, "") == 1);
    CHECK(run(s, "frobnicate") == 1);
    CHECK(run(s, "train") == 1);

    write_file(s / "junk.hsic", "not a cube");
    write_file(s / "junk.hsil", "not labels");
    CHECK(run(s, "train --cube " + (s / "junk.hsic") + " --labels " + (s / "junk.hsil")) == 2);
    CHECK(run(s, "eval --checkpoint " + (s / "missing.sstc") + " --cube " + (s / "junk.hsic") + " --labels " +
                     (s / "junk.hsil")) == 2);

    const std::string data = synth(s, "d");
    CHECK(run(s, "al " + data + " --strategy sideways") == 1);
    CHECK(run(s, "al " + data + " --neighborhood 2") == 1);
    CHECK(run(s, "transfer " + data + " --rho 2") == 1);
}

TEST_CASE("a diverging run exits with the numerical code") {
    Scratch s;
    const std::string data = synth(s, "d");
    nlohmann::json j = nlohmann::json::parse(slurp(small_config(s)));
    j["lr"] = 1e308;  // steps of this size overflow the activations
    j["decay"] = 0.0;
    j["epochs"] = 5;
    write_file(s / "wild.json", j.dump());
    CHECK(run(s, "train " + data + " --config " + (s / "wild.json")) == 3);
}

TEST_CASE("train, eval, al, transfer and ablate") {
    Scratch s;
    const std::string data = synth(s, "src");
    const std::string config = "--config " + small_config(s);

    REQUIRE(run(s, "train " + data + " " + config + " --seed 3 --manifest " + (s / "split.json") + " --checkpoint " +
                       (s / "model.sstc") + " --out " + (s / "train.json")) == 0);
    CHECK(slurp(s / "stderr").find("config") != std::string::npos);
    const auto trained = nlohmann::json::parse(slurp(s / "train.json"));
    CHECK(trained.at("epoch_losses").size() == 2);
    const SplitManifest split = load_manifest(s / "split.json");
    CHECK(trained.at("test_size").get<std::size_t>() == split.test.size());
    const Checkpoint ckpt = load_checkpoint(s / "model.sstc");
    CHECK(ckpt.config.at("d_model").get<std::size_t>() == 8);

    // rerunning with the same seed and manifest reproduces the metrics
    REQUIRE(run(s, "train " + data + " " + config + " --seed 3 --manifest " + (s / "split.json") + " --out " +
                       (s / "again.json")) == 0);
    CHECK(slurp(s / "again.json") == slurp(s / "train.json"));

    // flags override the config file
    REQUIRE(run(s, "train " + data + " " + config + " --epochs 1 --seed 3 --manifest " + (s / "split.json") + " --out " +
                       (s / "one.json")) == 0);
    CHECK(nlohmann::json::parse(slurp(s / "one.json")).at("epoch_losses").size() == 1);

    REQUIRE(run(s, "eval " + data + " " + config + " --checkpoint " + (s / "model.sstc") + " --manifest " +
                       (s / "split.json") + " --out " + (s / "eval.json")) == 0);
    const auto evaluated = nlohmann::json::parse(slurp(s / "eval.json"));
    CHECK(evaluated == trained.at("test"));

    REQUIRE(run(s, "al " + data + " " + config + " --seed 3 --strategy entropy --query-size 3 --rounds 2 --manifest " +
                       (s / "split.json") + " --out " + (s / "rounds.ndjson") + " --checkpoint " + (s / "al.sstc")) == 0);
    std::istringstream lines(slurp(s / "rounds.ndjson"));
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        const auto r = nlohmann::json::parse(line);
        CHECK(r.at("round").get<std::size_t>() == count);
        CHECK(r.at("train_size").get<std::size_t>() == split.train.size() + 3 * count);
        CHECK(r.at("strategy").get<std::string>() == "entropy");
        ++count;
    }
    CHECK(count == 3);
    CHECK(fs::exists(s / "al.sstc"));
    // the round log is append-only
    REQUIRE(run(s, "al " + data + " " + config + " --seed 3 --rounds 1 --manifest " + (s / "split.json") + " --out " +
                       (s / "rounds.ndjson")) == 0);
    std::istringstream more(slurp(s / "rounds.ndjson"));
    count = 0;
    while (std::getline(more, line)) ++count;
    CHECK(count == 5);

    REQUIRE(run(s, "synth --classes 3 --size 16x16x6 --noise 0.2 --seed 6 --shift 1.0 --out " + (s / "tgt")) == 0);
    const std::string target = "--target-cube " + (s / "tgt.hsic") + " --target-labels " + (s / "tgt.hsil");
    REQUIRE(run(s, "transfer " + data + " " + target + " " + config + " --source-ckpt " + (s / "model.sstc") +
                       " --rho 0.5 --out " + (s / "transfer.json") + " --checkpoint " + (s / "tuned.sstc")) == 0);
    const auto rep = nlohmann::json::parse(slurp(s / "transfer.json"));
    CHECK(rep.at("frozen").size() == 1);
    CHECK(rep.at("per_layer_mmd").size() == 2);
    CHECK(rep.contains("zero_shot"));
    CHECK(rep.contains("fine_tuned"));
    CHECK(fs::exists(s / "tuned.sstc"));
    REQUIRE(run(s, "transfer " + data + " " + target + " " + config + " --source-ckpt " + (s / "model.sstc") +
                       " --rho 0.5 --out " + (s / "transfer2.json")) == 0);
    CHECK(slurp(s / "transfer2.json") == slurp(s / "transfer.json"));

    REQUIRE(run(s, "ablate " + data + " " + config + " --seeds 1 --out " + (s / "ablation.csv")) == 0);
    const std::string csv = slurp(s / "ablation.csv");
    CHECK(csv.rfind("strategy,budget,seed,oa,aa,kappa\n", 0) == 0);
    for (const char* variant : {"hybrid", "random", "entropy", "margin", "diversity_only", "no_al", "no_diversity", "no_calibration"})
        CHECK_MESSAGE(csv.find(std::string("\n") + variant + ",") != std::string::npos, variant);
}
