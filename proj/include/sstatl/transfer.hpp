#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/metrics.hpp"
#include "sstatl/sst_model.hpp"
#include "sstatl/trainer.hpp"

namespace sstatl {

enum class MmdKernel { rbf, linear };
enum class MmdEstimator { unbiased, biased };

struct MmdConfig {
    MmdKernel kernel = MmdKernel::rbf;
    std::optional<double> bandwidth;  // unset selects the median heuristic
    MmdEstimator estimator = MmdEstimator::unbiased;
    std::size_t sample_count = 128;   // windows drawn per domain for freeze planning

    void validate() const;
};

struct FreezePlan {
    std::vector<double> layer_mmd;
    std::vector<double> layer_variance_gap;  // logged alongside, not used for selection
    std::vector<std::size_t> frozen;        // ascending layer indices
    double rho = 0.5;

    bool freezes(std::size_t layer) const;
    nlohmann::json to_json() const;
};

/// Mean over tokens of the encoder output at `layer` (0-based), one row per
/// window, evaluation mode.
Tensor layer_features(const SstModel& model, std::span<const PatchWindow> windows, std::size_t layer);

/// Median pairwise Euclidean distance over the rows of X and Y together.
double median_bandwidth(const Tensor& x, const Tensor& y);

/// Squared maximum mean discrepancy between the row samples X and Y, clamped
/// at zero. The unbiased estimator averages within-sample kernels over i != j
/// and the cross term over all pairs; the biased one averages over all pairs.
/// With the median heuristic a zero median falls back to bandwidth 1.
double mmd(const Tensor& x, const Tensor& y, const MmdConfig& config);

/// Per-layer MMD between source and target features; freezes the
/// floor(rho * L) layers with the lowest MMD (lower index wins ties). Windows
/// beyond config.sample_count per domain are subsampled with `seed`.
FreezePlan freeze_plan(const SstModel& model, std::span<const PatchWindow> source, std::span<const PatchWindow> target,
                       double rho, const MmdConfig& config, std::uint64_t seed = 0);

/// Sets the model's freeze flags from a plan: listed layers frozen, the
/// embedding frozen iff layer 0 is, the head always trainable.
void apply_freeze_plan(SstModel& model, const FreezePlan& plan);

/// Applies the plan and trains on the target windows with a fresh optimizer.
/// Returns per-epoch losses. Target labels must fit the model's class count.
std::vector<double> fine_tune(SstModel& model, std::span<const PatchWindow> target_train, const FreezePlan& plan,
                              const TrainConfig& config);

}  // namespace sstatl
