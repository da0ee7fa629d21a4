#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sstatl/active_learning.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/metrics.hpp"
#include "sstatl/sst_model.hpp"
#include "sstatl/trainer.hpp"
#include "sstatl/transfer.hpp"

namespace sstatl {

/// Everything a command needs, with the experimental defaults.
struct RunConfig {
    SstConfig model;
    QueryConfig query;
    MmdConfig mmd;
    SplitRatios ratios;
    TrainConfig train;
    std::size_t rounds = 6;
    std::uint64_t seed = 0;
    double rho = 0.5;
    double target_fraction = 0.10;
    bool warm_start = true;  // AL rounds continue training the current model

    RunConfig();
    nlohmann::json to_json() const;
    /// Overrides the fields present in `j`.
    void merge_json(const nlohmann::json& j);
};

struct Dataset {
    HsiCube cube;
    LabelMap labels;
};

/// Model config for a dataset: bands and classes come from the data.
SstConfig model_config_for(const RunConfig& config, const Dataset& data);

struct TrainOutcome {
    SstModel model;
    std::vector<double> losses;
    MetricsReport train_metrics;
    MetricsReport test_metrics;
};

/// Trains a fresh model on the manifest's train split and scores both splits.
TrainOutcome train_on_split(const Dataset& data, const SplitManifest& split, const RunConfig& config);

struct AlOutcome {
    SstModel model;
    std::vector<RoundRecord> rounds;  // rounds[0] is the initial model
    std::vector<std::size_t> train;
    std::vector<std::size_t> pool;
};

/// Initial training followed by config.rounds query/label/retrain rounds.
/// `query_sizes`, when non-empty, overrides config.query.query_size per round.
AlOutcome run_active_learning(const Dataset& data, const SplitManifest& split, const RunConfig& config,
                              const std::function<void(const RoundRecord&)>& on_round = {},
                              const std::vector<std::size_t>& query_sizes = {});

struct TransferReport {
    std::string source;
    std::string target;
    FreezePlan plan;
    MetricsReport zero_shot;
    MetricsReport fine_tuned;
    std::vector<double> losses;
    std::size_t target_labels = 0;  // target pixels used for fine-tuning

    nlohmann::json to_json() const;
};

/// Zero-shot evaluation on the target test split, freeze planning, then
/// fine-tuning on target_fraction of the target's labeled pixels.
TransferReport run_transfer(SstModel& model, const Dataset& source, const Dataset& target, const RunConfig& config);

struct AblationRow {
    std::string variant;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

/// Query strategies and component toggles over matched budgets and seeds. The
/// transfer toggles run only when `target` is given.
std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& config, const std::vector<std::uint64_t>& seeds,
                                      const Dataset* target = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace sstatl
