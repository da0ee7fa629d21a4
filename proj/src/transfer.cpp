#include "sstatl/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sstatl/rng.hpp"

namespace sstatl {

void MmdConfig::validate() const {
    if (sample_count < 2) throw Error(Errc::invalid_argument, "MMD needs at least two samples per domain");
    if (bandwidth && !(*bandwidth > 0.0)) throw Error(Errc::invalid_argument, "MMD bandwidth must be positive");
}

bool FreezePlan::freezes(std::size_t layer) const {
    return std::find(frozen.begin(), frozen.end(), layer) != frozen.end();
}

nlohmann::json FreezePlan::to_json() const {
    return {{"per_layer_mmd", layer_mmd}, {"per_layer_variance_gap", layer_variance_gap}, {"frozen", frozen}, {"rho", rho}};
}

Tensor layer_features(const SstModel& model, std::span<const PatchWindow> windows, std::size_t layer) {
    const SstConfig& c = model.config();
    if (layer >= c.layers)
        throw Error(Errc::out_of_range, "layer " + std::to_string(layer) + " of " + std::to_string(c.layers));
    const std::size_t tokens = c.tokens(), d = c.d_model, chunk = 256;
    Tensor out({windows.size(), d});
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        const std::size_t n = std::min(chunk, windows.size() - start);
        ForwardTrace trace;
        model.predict(windows.subspan(start, n), &trace);
        const Tensor& z = trace.layer_outputs[layer];
        for (std::size_t b = 0; b < n; ++b) {
            double* row = out.data.data() + (start + b) * d;
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t j = 0; j < d; ++j) row[j] += z(b * tokens + t, j);
            for (std::size_t j = 0; j < d; ++j) row[j] /= static_cast<double>(tokens);
        }
    }
    return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double median_bandwidth(const Tensor& x, const Tensor& y) {
    std::vector<std::span<const double>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(x.row(i));
    for (std::size_t i = 0; i < y.rows(); ++i) rows.push_back(y.row(i));
    std::vector<double> dist;
    dist.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) dist.push_back(std::sqrt(squared_distance(rows[i], rows[j])));
    if (dist.empty()) return 0.0;
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    if (dist.size() % 2 == 1) return dist[mid];
    const double upper = dist[mid];
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double mmd(const Tensor& x, const Tensor& y, const MmdConfig& config) {
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols())
        throw Error(Errc::shape_mismatch, "mmd samples " + shape_string(x.shape) + " and " + shape_string(y.shape));
    if (x.rows() < 2 || y.rows() < 2) throw Error(Errc::invalid_argument, "mmd needs at least two rows per sample");
    if (config.bandwidth && !(*config.bandwidth > 0.0))
        throw Error(Errc::invalid_argument, "MMD bandwidth must be positive");

    double gamma = 0.0;
    if (config.kernel == MmdKernel::rbf) {
        double sigma = config.bandwidth ? *config.bandwidth : median_bandwidth(x, y);
        if (sigma == 0.0) sigma = 1.0;
        gamma = 1.0 / (2.0 * sigma * sigma);
    }
    auto kernel = [&](std::span<const double> a, std::span<const double> b) {
        return config.kernel == MmdKernel::rbf ? std::exp(-gamma * squared_distance(a, b)) : dot(a, b);
    };
    const bool unbiased = config.estimator == MmdEstimator::unbiased;
    auto within = [&](const Tensor& s) {
        const std::size_t n = s.rows();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j || !unbiased) total += kernel(s.row(i), s.row(j));
        const double pairs = unbiased ? static_cast<double>(n * (n - 1)) : static_cast<double>(n * n);
        return total / pairs;
    };
    double cross = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) cross += kernel(x.row(i), y.row(j));
    cross /= static_cast<double>(x.rows() * y.rows());
    return std::max(0.0, within(x) + within(y) - 2.0 * cross);
}

namespace {

std::vector<PatchWindow> subsample(std::span<const PatchWindow> windows, std::size_t count, std::uint64_t seed) {
    if (windows.size() <= count) return {windows.begin(), windows.end()};
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    order.resize(count);
    std::sort(order.begin(), order.end());
    std::vector<PatchWindow> out;
    for (std::size_t i : order) out.push_back(windows[i]);
    return out;
}

double variance_gap(const Tensor& a, const Tensor& b) {
    auto column_variances = [](const Tensor& t) {
        std::vector<double> mean(t.cols()), var(t.cols());
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) mean[j] += t(i, j);
        for (double& m : mean) m /= static_cast<double>(t.rows());
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) var[j] += (t(i, j) - mean[j]) * (t(i, j) - mean[j]);
        for (double& v : var) v /= static_cast<double>(t.rows());
        return var;
    };
    const auto va = column_variances(a), vb = column_variances(b);
    double gap = 0.0;
    for (std::size_t j = 0; j < va.size(); ++j) gap += std::abs(va[j] - vb[j]);
    return gap / static_cast<double>(va.size());
}

}  // namespace

FreezePlan freeze_plan(const SstModel& model, std::span<const PatchWindow> source, std::span<const PatchWindow> target,
                       double rho, const MmdConfig& config, std::uint64_t seed) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(Errc::invalid_argument, "rho must lie in [0, 1]");
    config.validate();
    const auto src = subsample(source, config.sample_count, derive_seed(seed, 0));
    const auto tgt = subsample(target, config.sample_count, derive_seed(seed, 1));
    const std::size_t layers = model.config().layers;

    FreezePlan plan;
    plan.rho = rho;
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor fs = layer_features(model, src, l);
        const Tensor ft = layer_features(model, tgt, l);
        plan.layer_mmd.push_back(mmd(fs, ft, config));
        plan.layer_variance_gap.push_back(variance_gap(fs, ft));
    }
    std::vector<std::size_t> order(layers);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return plan.layer_mmd[a] < plan.layer_mmd[b]; });
    const auto count = static_cast<std::size_t>(std::floor(rho * static_cast<double>(layers) + 1e-9));
    plan.frozen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(count, layers)));
    std::sort(plan.frozen.begin(), plan.frozen.end());
    return plan;
}

void apply_freeze_plan(SstModel& model, const FreezePlan& plan) {
    model.unfreeze_all();
    for (std::size_t l : plan.frozen) model.set_layer_frozen(l, true);
    model.set_embed_frozen(plan.freezes(0));
    model.set_head_frozen(false);
}

std::vector<double> fine_tune(SstModel& model, std::span<const PatchWindow> target_train, const FreezePlan& plan,
                              const TrainConfig& config) {
    std::size_t target_classes = 0;
    for (const PatchWindow& w : target_train) target_classes = std::max<std::size_t>(target_classes, w.label);
    if (!target_train.empty() && target_classes != model.config().classes)
        throw Error(Errc::invalid_argument, "target has " + std::to_string(target_classes) + " classes, model has " +
                                                std::to_string(model.config().classes) + "; reset the head first");
    apply_freeze_plan(model, plan);
    Adam optimizer(config.adam);
    return train(model, optimizer, target_train, config);
}

}  // namespace sstatl
