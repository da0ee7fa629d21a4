#include "sstatl/pipeline.hpp"

#include <chrono>
#include <cstdio>

#include "sstatl/rng.hpp"

namespace sstatl {

RunConfig::RunConfig() {
    query.query_size = 148;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["model"] = model.to_json();
    j["query"] = {{"query_size", query.query_size},
                  {"neighborhood", query.neighborhood},
                  {"beta", query.beta},
                  {"strategy", std::string(to_string(query.strategy))}};
    j["mmd"] = {{"kernel", mmd.kernel == MmdKernel::rbf ? "rbf" : "linear"},
                {"bandwidth", mmd.bandwidth ? nlohmann::json(*mmd.bandwidth) : nlohmann::json("median")},
                {"estimator", mmd.estimator == MmdEstimator::unbiased ? "unbiased" : "biased"},
                {"sample_count", mmd.sample_count}};
    j["ratios"] = {ratios.train, ratios.pool, ratios.test};
    j["epochs"] = train.epochs;
    j["batch_size"] = train.batch_size;
    j["lr"] = train.adam.lr;
    j["decay"] = train.adam.decay;
    j["decay_mode"] = train.adam.mode == DecayMode::learning_rate ? "learning_rate" : "weight";
    j["rounds"] = rounds;
    j["seed"] = seed;
    j["rho"] = rho;
    j["target_fraction"] = target_fraction;
    j["warm_start"] = warm_start;
    return j;
}

void RunConfig::merge_json(const nlohmann::json& j) {
    try {
        if (j.contains("model")) model.merge_json(j.at("model"));
        if (j.contains("query")) {
            const auto& q = j.at("query");
            if (q.contains("query_size")) query.query_size = q.at("query_size").get<std::size_t>();
            if (q.contains("neighborhood")) query.neighborhood = q.at("neighborhood").get<std::size_t>();
            if (q.contains("beta")) query.beta = q.at("beta").get<double>();
            if (q.contains("strategy")) {
                const auto s = parse_strategy(q.at("strategy").get<std::string>());
                if (!s) throw Error(Errc::invalid_argument, "unknown strategy " + q.at("strategy").dump());
                query.strategy = *s;
            }
        }
        if (j.contains("mmd")) {
            const auto& m = j.at("mmd");
            if (m.contains("kernel")) mmd.kernel = m.at("kernel").get<std::string>() == "linear" ? MmdKernel::linear : MmdKernel::rbf;
            if (m.contains("bandwidth")) {
                if (m.at("bandwidth").is_number())
                    mmd.bandwidth = m.at("bandwidth").get<double>();
                else
                    mmd.bandwidth.reset();
            }
            if (m.contains("estimator"))
                mmd.estimator = m.at("estimator").get<std::string>() == "biased" ? MmdEstimator::biased : MmdEstimator::unbiased;
            if (m.contains("sample_count")) mmd.sample_count = m.at("sample_count").get<std::size_t>();
        }
        if (j.contains("ratios")) {
            const auto r = j.at("ratios").get<std::vector<double>>();
            if (r.size() != 3) throw Error(Errc::invalid_argument, "ratios needs three entries");
            ratios = {r[0], r[1], r[2]};
        }
        if (j.contains("epochs")) train.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) train.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("lr")) train.adam.lr = j.at("lr").get<double>();
        if (j.contains("decay")) train.adam.decay = j.at("decay").get<double>();
        if (j.contains("decay_mode"))
            train.adam.mode = j.at("decay_mode").get<std::string>() == "weight" ? DecayMode::weight : DecayMode::learning_rate;
        if (j.contains("rounds")) rounds = j.at("rounds").get<std::size_t>();
        if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("rho")) rho = j.at("rho").get<double>();
        if (j.contains("target_fraction")) target_fraction = j.at("target_fraction").get<double>();
        if (j.contains("warm_start")) warm_start = j.at("warm_start").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("config: ") + e.what());
    }
}

SstConfig model_config_for(const RunConfig& config, const Dataset& data) {
    SstConfig c = config.model;
    c.bands = data.cube.bands;
    c.classes = data.labels.class_count();
    return c;
}

namespace {

std::vector<PatchWindow> windows_of(const Dataset& data, std::span<const std::size_t> indices, std::size_t window) {
    return extract_windows(data.cube, data.labels, indices, window);
}

TrainConfig train_config(const RunConfig& config, std::uint64_t stream) {
    TrainConfig t = config.train;
    t.seed = derive_seed(config.seed, stream);
    return t;
}

}  // namespace

TrainOutcome train_on_split(const Dataset& data, const SplitManifest& split, const RunConfig& config) {
    SstModel model(model_config_for(config, data), derive_seed(config.seed, 100));
    const auto train_windows = windows_of(data, split.train, model.config().window);
    Adam optimizer(config.train.adam);
    auto losses = train(model, optimizer, train_windows, train_config(config, 101));
    MetricsReport train_metrics = evaluate(model, train_windows);
    MetricsReport test_metrics;
    if (!split.test.empty()) test_metrics = evaluate(model, windows_of(data, split.test, model.config().window));
    return {std::move(model), std::move(losses), train_metrics, test_metrics};
}

AlOutcome run_active_learning(const Dataset& data, const SplitManifest& split, const RunConfig& config,
                              const std::function<void(const RoundRecord&)>& on_round,
                              const std::vector<std::size_t>& query_sizes) {
    using clock = std::chrono::steady_clock;
    const SstConfig model_config = model_config_for(config, data);
    AlOutcome out{SstModel(model_config, derive_seed(config.seed, 100)), {}, split.train, split.pool};
    const auto test_windows = windows_of(data, split.test, model_config.window);
    Adam optimizer(config.train.adam);

    auto fit_and_score = [&](std::size_t round, std::vector<std::size_t> queried, clock::time_point started) {
        if (round > 0 && !config.warm_start) {
            out.model = SstModel(model_config, derive_seed(config.seed, 100));
            optimizer = Adam(config.train.adam);
        }
        const auto train_windows = windows_of(data, out.train, model_config.window);
        train(out.model, optimizer, train_windows, train_config(config, 200 + round));
        RoundRecord rec;
        rec.round = round;
        rec.strategy = config.query.strategy;
        rec.train_size = out.train.size();
        rec.queried = std::move(queried);
        if (!test_windows.empty()) {
            const MetricsReport m = evaluate(out.model, test_windows);
            rec.oa = m.oa;
            rec.aa = m.aa;
            rec.kappa = m.kappa;
        }
        rec.wall_seconds = std::chrono::duration<double>(clock::now() - started).count();
        if (on_round) on_round(rec);
        out.rounds.push_back(std::move(rec));
    };

    fit_and_score(0, {}, clock::now());
    for (std::size_t r = 1; r <= config.rounds && !out.pool.empty(); ++r) {
        const auto started = clock::now();
        QueryConfig q = config.query;
        if (!query_sizes.empty()) q.query_size = query_sizes.at(r - 1);
        const QueryResult result = run_query(out.model, data.cube, data.labels, out.pool, q, derive_seed(config.seed, 300 + r));
        auto [train_next, pool_next] = al_round(out.train, out.pool, result.selected);
        out.train = std::move(train_next);
        out.pool = std::move(pool_next);
        fit_and_score(r, result.selected, started);
    }
    return out;
}

nlohmann::json TransferReport::to_json() const {
    return {{"source", source},
            {"target", target},
            {"per_layer_mmd", plan.layer_mmd},
            {"per_layer_variance_gap", plan.layer_variance_gap},
            {"frozen", plan.frozen},
            {"rho", plan.rho},
            {"zero_shot", {{"oa", zero_shot.oa}, {"aa", zero_shot.aa}, {"kappa", zero_shot.kappa}}},
            {"fine_tuned", {{"oa", fine_tuned.oa}, {"aa", fine_tuned.aa}, {"kappa", fine_tuned.kappa}}},
            {"epoch_losses", losses},
            {"target_labels", target_labels}};
}

TransferReport run_transfer(SstModel& model, const Dataset& source, const Dataset& target, const RunConfig& config) {
    if (source.cube.bands != target.cube.bands)
        throw Error(Errc::invalid_argument, "source and target band counts differ");
    const std::size_t window = model.config().window;
    const std::size_t target_classes = target.labels.class_count();
    const double f = config.target_fraction;
    const SplitManifest split = make_split(target.labels, {f, 0.0, 1.0 - f}, derive_seed(config.seed, 400));
    const auto tune_windows = windows_of(target, split.train, window);
    const auto test_windows = windows_of(target, split.test, window);

    TransferReport rep;
    rep.source = "source";
    rep.target = "target";
    {
        const auto predicted = predict_labels(model, test_windows);
        std::vector<std::uint16_t> truth;
        for (const PatchWindow& w : test_windows) truth.push_back(w.label);
        rep.zero_shot = report(confusion(predicted, truth, std::max(target_classes, model.config().classes)));
    }

    // MMD is label-free: sample windows from every labeled pixel of each domain.
    Rng rng(derive_seed(config.seed, 401));
    auto sample_windows = [&](const Dataset& d) {
        auto idx = d.labels.labeled_indices();
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(std::min(idx.size(), config.mmd.sample_count));
        return windows_of(d, idx, window);
    };
    const auto src_sample = sample_windows(source);
    const auto tgt_sample = sample_windows(target);
    rep.plan = freeze_plan(model, src_sample, tgt_sample, config.rho, config.mmd, derive_seed(config.seed, 402));

    if (target_classes != model.config().classes) model.reset_head(target_classes, derive_seed(config.seed, 403));
    rep.losses = fine_tune(model, tune_windows, rep.plan, train_config(config, 404));
    rep.target_labels = tune_windows.size();
    rep.fine_tuned = evaluate(model, test_windows);
    return rep;
}

std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& config, const std::vector<std::uint64_t>& seeds,
                                      const Dataset* target) {
    struct Variant {
        std::string name;
        Strategy strategy;
        std::size_t neighborhood;
        bool calibrated;
    };
    const std::vector<Variant> variants = {
        {"hybrid", Strategy::hybrid, config.query.neighborhood, true},
        {"random", Strategy::random, config.query.neighborhood, true},
        {"entropy", Strategy::entropy, config.query.neighborhood, true},
        {"margin", Strategy::margin, config.query.neighborhood, true},
        {"diversity_only", Strategy::diversity_only, config.query.neighborhood, true},
        {"no_diversity", Strategy::hybrid, 1, true},
        {"no_calibration", Strategy::hybrid, config.query.neighborhood, false},
    };
    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        RunConfig base = config;
        base.seed = seed;
        const SplitManifest split = make_split(data.labels, base.ratios, derive_seed(seed, 500));
        for (const Variant& v : variants) {
            RunConfig rc = base;
            rc.query.strategy = v.strategy;
            rc.query.neighborhood = v.neighborhood;
            if (!v.calibrated) rc.model.lambda = 0.0;
            const AlOutcome al = run_active_learning(data, split, rc);
            const RoundRecord& last = al.rounds.back();
            MetricsReport m;
            m.oa = last.oa;
            m.aa = last.aa;
            m.kappa = last.kappa;
            rows.push_back({v.name, last.train_size, seed, m});
            if (v.name == "hybrid") {
                // no AL: the model from the initial labels alone
                const RoundRecord& first = al.rounds.front();
                MetricsReport m0;
                m0.oa = first.oa;
                m0.aa = first.aa;
                m0.kappa = first.kappa;
                rows.push_back({"no_al", first.train_size, seed, m0});
            }
            if (target && v.name == "hybrid") {
                for (const auto& [name, rho] : {std::pair<std::string, double>{"transfer_freezing", rc.rho},
                                                std::pair<std::string, double>{"no_freezing", 0.0}}) {
                    SstModel model = al.model;
                    RunConfig tc = rc;
                    tc.rho = rho;
                    const TransferReport rep = run_transfer(model, data, *target, tc);
                    rows.push_back({name, rep.target_labels, seed, rep.fine_tuned});
                }
            }
        }
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "strategy,budget,seed,oa,aa,kappa\n";
    char line[160];
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof line, "%s,%zu,%llu,%.2f,%.2f,%.2f\n", r.variant.c_str(), r.budget,
                      static_cast<unsigned long long>(r.seed), 100.0 * r.metrics.oa, 100.0 * r.metrics.aa,
                      100.0 * r.metrics.kappa);
        out += line;
    }
    return out;
}

}  // namespace sstatl
