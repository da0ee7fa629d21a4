#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sstatl/adam.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/metrics.hpp"
#include "sstatl/sst_model.hpp"

namespace sstatl {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 56;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

/// Gradients of the mean cross-entropy over `batch`, written into each
/// parameter's `grad` (zeros for frozen parameters). Returns the loss.
double compute_gradients(SstModel& model, std::span<const PatchWindow> batch, bool training, std::uint64_t seed);

/// Minibatch training with per-epoch reshuffling. Returns the mean loss of
/// every epoch. Throws Errc::numerical on a non-finite loss.
std::vector<double> train(SstModel& model, Adam& optimizer, std::span<const PatchWindow> windows,
                          const TrainConfig& config);

/// Evaluation-mode probabilities [n x C], computed in chunks.
Tensor predict_proba(const SstModel& model, std::span<const PatchWindow> windows, std::size_t chunk = 256);

/// Arg-max class ids (1..C).
std::vector<std::uint16_t> predict_labels(const SstModel& model, std::span<const PatchWindow> windows);

MetricsReport evaluate(const SstModel& model, std::span<const PatchWindow> windows);

}  // namespace sstatl
