#include "sstatl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sstatl/ops.hpp"
#include "sstatl/rng.hpp"

namespace sstatl {

double compute_gradients(SstModel& model, std::span<const PatchWindow> batch, bool training, std::uint64_t seed) {
    Tape tape;
    std::vector<Var> bound;
    Var probs = model.forward(tape, batch, training, seed, true, &bound);
    std::vector<std::size_t> targets;
    targets.reserve(batch.size());
    for (const PatchWindow& w : batch) {
        if (w.label < 1 || w.label > model.config().classes)
            throw Error(Errc::out_of_range, "window label " + std::to_string(w.label) + " outside the model's classes");
        targets.push_back(w.label - 1u);
    }
    Var loss = ops::cross_entropy(tape, probs, targets);
    tape.backward(loss);
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i].grad = params[i].frozen ? Tensor(params[i].value.shape) : tape.grad(bound[i]);
    return tape.value(loss).data[0];
}

std::vector<double> train(SstModel& model, Adam& optimizer, std::span<const PatchWindow> windows,
                          const TrainConfig& config) {
    std::vector<double> losses;
    if (windows.empty() || config.epochs == 0) return losses;
    if (config.batch_size == 0) throw Error(Errc::invalid_argument, "batch size must be positive");
    Rng rng(derive_seed(config.seed, 0x7a11));
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PatchWindow> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(windows[order[i]]);
            const double loss = compute_gradients(model, batch, true, rng.next());
            if (!std::isfinite(loss))
                throw Error(Errc::numerical, "non-finite loss at epoch " + std::to_string(epoch));
            optimizer.step(model.parameters());
            total += loss * static_cast<double>(end - start);
        }
        losses.push_back(total / static_cast<double>(order.size()));
    }
    return losses;
}

Tensor predict_proba(const SstModel& model, std::span<const PatchWindow> windows, std::size_t chunk) {
    const std::size_t classes = model.config().classes;
    Tensor out({windows.size(), classes});
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        const std::size_t n = std::min(chunk, windows.size() - start);
        Tensor probs = model.predict(windows.subspan(start, n));
        std::copy(probs.data.begin(), probs.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * classes));
    }
    return out;
}

std::vector<std::uint16_t> predict_labels(const SstModel& model, std::span<const PatchWindow> windows) {
    const Tensor probs = predict_proba(model, windows);
    std::vector<std::uint16_t> out(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto row = probs.row(i);
        out[i] = static_cast<std::uint16_t>(std::max_element(row.begin(), row.end()) - row.begin() + 1);
    }
    return out;
}

MetricsReport evaluate(const SstModel& model, std::span<const PatchWindow> windows) {
    const auto predicted = predict_labels(model, windows);
    std::vector<std::uint16_t> truth;
    truth.reserve(windows.size());
    for (const PatchWindow& w : windows) truth.push_back(w.label);
    return report(confusion(predicted, truth, model.config().classes));
}

}  // namespace sstatl
