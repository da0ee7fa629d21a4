// sst_atl: command-line driver for synthesis, training, active learning,
// transfer, evaluation and ablation.
//
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sstatl/checkpoint.hpp"
#include "sstatl/errors.hpp"
#include "sstatl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sstatl;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, numerical = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string cube, labels, manifest, checkpoint, out;

    // synth
    std::size_t classes = 4;
    std::string size = "48x48x16";
    double noise = 0.0;
    double shift = 0.0;

    // al / ablate
    std::string strategy;
    std::optional<std::size_t> query_size, rounds, neighborhood, epochs;
    std::optional<double> beta;
    std::size_t seeds = 3;

    // transfer
    std::string source_ckpt, target_cube, target_labels;
    std::optional<double> rho, target_fraction;
};

RunConfig resolve(const Flags& f) {
    RunConfig rc;
    if (!f.config.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(f.config));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::invalid_header, f.config + ": " + e.what());
        }
        rc.merge_json(j);
    }
    if (f.seed) rc.seed = *f.seed;
    if (!f.strategy.empty()) {
        auto s = parse_strategy(f.strategy);
        if (!s) throw UsageError("unknown strategy '" + f.strategy + "'");
        rc.query.strategy = *s;
    }
    if (f.query_size) rc.query.query_size = *f.query_size;
    if (f.rounds) rc.rounds = *f.rounds;
    if (f.neighborhood) rc.query.neighborhood = *f.neighborhood;
    if (f.beta) rc.query.beta = *f.beta;
    if (f.epochs) rc.train.epochs = *f.epochs;
    if (f.rho) rc.rho = *f.rho;
    if (f.target_fraction) rc.target_fraction = *f.target_fraction;
    if (rc.rho < 0.0 || rc.rho > 1.0) throw UsageError("--rho must lie in [0, 1]");
    if (!(rc.target_fraction > 0.0 && rc.target_fraction < 1.0))
        throw UsageError("--target-fraction must lie in (0, 1)");
    rc.query.validate();
    return rc;
}

void print_config(const RunConfig& rc) { std::cerr << "config " << rc.to_json().dump(2) << "\n"; }

void need(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

Dataset load_dataset(const std::string& cube, const std::string& labels) {
    Dataset d{load_cube(cube), load_labels(labels)};
    if (d.cube.rows != d.labels.rows || d.cube.cols != d.labels.cols)
        throw Error(Errc::shape_mismatch, cube + " and " + labels + " disagree on spatial size");
    d.labels.validate();
    return d;
}

// Uses the manifest file when it exists, otherwise draws a split and, if a
// path was given, writes it there.
SplitManifest split_for(const Flags& f, const Dataset& d, const RunConfig& rc) {
    if (!f.manifest.empty() && fs::exists(f.manifest)) return load_manifest(f.manifest);
    SplitManifest m = make_split(d.labels, rc.ratios, rc.seed);
    if (!f.manifest.empty()) save_manifest(f.manifest, m);
    return m;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    write_file(path, text);
}

int cmd_synth(const Flags& f) {
    static const std::regex dims(R"((\d+)x(\d+)x(\d+))");
    std::smatch m;
    if (!std::regex_match(f.size, m, dims)) throw UsageError("--size must look like MxNxK");
    SynthParams p;
    p.classes = f.classes;
    p.rows = static_cast<std::uint32_t>(std::stoul(m[1]));
    p.cols = static_cast<std::uint32_t>(std::stoul(m[2]));
    p.bands = static_cast<std::uint32_t>(std::stoul(m[3]));
    p.noise_sigma = f.noise;
    p.domain_shift = f.shift;
    p.seed = f.seed.value_or(0);
    if (p.rows == 0 || p.cols == 0 || p.bands == 0) throw UsageError("--size dimensions must be positive");
    if (p.classes > std::size_t{p.rows} * p.cols) throw UsageError("more classes than pixels");
    if (p.noise_sigma < 0) throw UsageError("--noise must be non-negative");
    const std::string stem = f.out.empty() ? "synth" : f.out;
    const std::string cube_path = f.cube.empty() ? stem + ".hsic" : f.cube;
    const std::string label_path = f.labels.empty() ? stem + ".hsil" : f.labels;

    auto [cube, labels] = synth_cube(p);
    save_cube(cube_path, cube);
    save_labels(label_path, labels);
    if (!f.manifest.empty()) save_manifest(f.manifest, make_split(labels, SplitRatios{}, p.seed));
    std::printf("%s %ux%ux%u, %zu classes\n%s\n", cube_path.c_str(), cube.rows, cube.cols, cube.bands, p.classes,
                label_path.c_str());
    return ok;
}

int cmd_train(const Flags& f) {
    const RunConfig rc = resolve(f);
    print_config(rc);
    need(f.cube, "--cube");
    need(f.labels, "--labels");
    const Dataset d = load_dataset(f.cube, f.labels);
    const SplitManifest split = split_for(f, d, rc);
    const TrainOutcome t = train_on_split(d, split, rc);
    if (!f.checkpoint.empty()) save_checkpoint(f.checkpoint, t.model.to_checkpoint());
    nlohmann::json j = {{"train", t.train_metrics.to_json()},
                        {"test", t.test_metrics.to_json()},
                        {"epoch_losses", t.losses},
                        {"train_size", split.train.size()},
                        {"test_size", split.test.size()}};
    write_text(f.out, j.dump(2) + "\n");
    std::cerr << t.test_metrics.to_table();
    return ok;
}

int cmd_al(const Flags& f) {
    const RunConfig rc = resolve(f);
    print_config(rc);
    need(f.cube, "--cube");
    need(f.labels, "--labels");
    const Dataset d = load_dataset(f.cube, f.labels);
    const SplitManifest split = split_for(f, d, rc);

    std::ofstream log;
    if (!f.out.empty()) {
        log.open(f.out, std::ios::app);
        if (!log) throw Error(Errc::io, "cannot open " + f.out);
    }
    auto on_round = [&](const RoundRecord& r) {
        const std::string line = r.to_json().dump() + "\n";
        if (log.is_open()) {
            log << line;
            log.flush();
        } else {
            std::cout << line << std::flush;
        }
        std::fprintf(stderr, "round %zu  train %zu  oa %.2f\n", r.round, r.train_size, 100.0 * r.oa);
    };
    const AlOutcome out = run_active_learning(d, split, rc, on_round);
    if (!f.checkpoint.empty()) save_checkpoint(f.checkpoint, out.model.to_checkpoint());
    return ok;
}

int cmd_transfer(const Flags& f) {
    RunConfig rc = resolve(f);
    need(f.source_ckpt, "--source-ckpt");
    need(f.cube, "--cube");
    need(f.labels, "--labels");
    need(f.target_cube, "--target-cube");
    need(f.target_labels, "--target-labels");
    SstModel model = SstModel::from_checkpoint(load_checkpoint(f.source_ckpt));
    rc.model = model.config();
    print_config(rc);
    const Dataset src = load_dataset(f.cube, f.labels);
    const Dataset tgt = load_dataset(f.target_cube, f.target_labels);
    TransferReport rep = run_transfer(model, src, tgt, rc);
    rep.source = f.cube;
    rep.target = f.target_cube;
    if (!f.checkpoint.empty()) save_checkpoint(f.checkpoint, model.to_checkpoint());
    write_text(f.out, rep.to_json().dump(2) + "\n");
    std::fprintf(stderr, "zero-shot oa %.2f  fine-tuned oa %.2f\n", 100.0 * rep.zero_shot.oa, 100.0 * rep.fine_tuned.oa);
    return ok;
}

int cmd_eval(const Flags& f) {
    RunConfig rc = resolve(f);
    need(f.checkpoint, "--checkpoint");
    need(f.cube, "--cube");
    need(f.labels, "--labels");
    const SstModel model = SstModel::from_checkpoint(load_checkpoint(f.checkpoint));
    rc.model = model.config();
    print_config(rc);
    const Dataset d = load_dataset(f.cube, f.labels);
    if (d.cube.bands != model.config().bands) throw Error(Errc::shape_mismatch, "cube bands differ from the checkpoint");
    const SplitManifest split = split_for(f, d, rc);
    const auto windows = extract_windows(d.cube, d.labels, split.test, model.config().window);
    const MetricsReport m = evaluate(model, windows);
    write_text(f.out, m.to_json().dump(2) + "\n");
    std::cerr << m.to_table();
    return ok;
}

int cmd_ablate(const Flags& f) {
    const RunConfig rc = resolve(f);
    print_config(rc);
    need(f.cube, "--cube");
    need(f.labels, "--labels");
    if (f.seeds == 0) throw UsageError("--seeds must be positive");
    const Dataset d = load_dataset(f.cube, f.labels);
    std::optional<Dataset> tgt;
    if (!f.target_cube.empty()) {
        need(f.target_labels, "--target-labels");
        tgt = load_dataset(f.target_cube, f.target_labels);
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < f.seeds; ++i) seeds.push_back(rc.seed + i);
    const auto rows = run_ablation(d, rc, seeds, tgt ? &*tgt : nullptr);
    write_text(f.out, ablation_csv(rows));
    return ok;
}

int exit_code(Errc c) {
    switch (c) {
    case Errc::numerical: return numerical;
    case Errc::invalid_argument: return usage;
    default: return data_error;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial-spectral transformer with active and transfer learning for hyperspectral images"};
    app.require_subcommand(1);
    Flags f;

    auto shared = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON run config; flags override it")->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--cube", f.cube, "HSIC cube file");
        sub->add_option("--labels", f.labels, "HSIL label file");
        sub->add_option("--manifest", f.manifest, "split manifest (read if present, else written)");
        sub->add_option("--checkpoint", f.checkpoint, "model checkpoint");
        sub->add_option("--out", f.out, "output path");
        sub->add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber);
    };
    auto al_flags = [&](CLI::App* sub) {
        sub->add_option("--strategy", f.strategy, "hybrid, random, entropy, margin or diversity_only");
        sub->add_option("--query-size", f.query_size, "labels added per round")->check(CLI::PositiveNumber);
        sub->add_option("--rounds", f.rounds, "AL rounds");
        sub->add_option("--beta", f.beta, "uncertainty prefilter multiple")->check(CLI::Range(1.0, 1e9));
        sub->add_option("--neighborhood", f.neighborhood, "odd diversity neighborhood side")->check(CLI::PositiveNumber);
    };
    auto transfer_flags = [&](CLI::App* sub) {
        sub->add_option("--source-ckpt", f.source_ckpt, "source-domain checkpoint");
        sub->add_option("--target-cube", f.target_cube, "target-domain cube");
        sub->add_option("--target-labels", f.target_labels, "target-domain labels");
        sub->add_option("--rho", f.rho, "fraction of encoder layers to freeze");
        sub->add_option("--target-fraction", f.target_fraction, "target labels used for fine-tuning (default 0.10)");
    };

    auto* synth = app.add_subcommand("synth", "write a synthetic Voronoi cube and label map");
    shared(synth);
    synth->add_option("--classes", f.classes, "number of classes")->check(CLI::PositiveNumber);
    synth->add_option("--size", f.size, "MxNxK (rows x cols x bands)");
    synth->add_option("--noise", f.noise, "Gaussian noise sigma");
    synth->add_option("--shift", f.shift, "spectral phase shift");

    auto* train = app.add_subcommand("train", "train on the split and report metrics");
    shared(train);
    auto* al = app.add_subcommand("al", "active learning rounds; appends NDJSON round records to --out");
    shared(al);
    al_flags(al);
    auto* transfer = app.add_subcommand("transfer", "freeze plan and fine-tuning on a target domain");
    shared(transfer);
    transfer_flags(transfer);
    auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on the test split");
    shared(eval);
    auto* ablate = app.add_subcommand("ablate", "strategy and component ablation as CSV");
    shared(ablate);
    al_flags(ablate);
    transfer_flags(ablate);
    ablate->add_option("--seeds", f.seeds, "number of consecutive seeds starting at --seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage;
    }

    try {
        if (*synth) return cmd_synth(f);
        if (*train) return cmd_train(f);
        if (*al) return cmd_al(f);
        if (*transfer) return cmd_transfer(f);
        if (*eval) return cmd_eval(f);
        if (*ablate) return cmd_ablate(f);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return usage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    }
    return usage;
}
