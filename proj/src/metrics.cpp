#include "sstatl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "sstatl/errors.hpp"

namespace sstatl {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < classes_; ++c) t += (*this)(c, c);
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < classes_; ++p) t += (*this)(truth, p);
    return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
    std::uint64_t t = 0;
    for (std::size_t r = 0; r < classes_; ++r) t += (*this)(r, predicted);
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw Error(Errc::shape_mismatch, "confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion(std::span<const std::uint16_t> predicted, std::span<const std::uint16_t> truth,
                          std::size_t classes) {
    if (predicted.size() != truth.size())
        throw Error(Errc::shape_mismatch, "confusion: prediction and label counts differ");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] < 1 || predicted[i] > classes || truth[i] < 1 || truth[i] > classes)
            throw Error(Errc::out_of_range, "class id outside 1.." + std::to_string(classes));
        ++cm(truth[i] - 1, predicted[i] - 1);
    }
    return cm;
}

namespace {
std::uint64_t require_total(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw Error(Errc::invalid_argument, "metrics of an empty confusion matrix");
    return total;
}
}  // namespace

double overall_accuracy(const ConfusionMatrix& cm) {
    const auto total = require_total(cm);
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double average_accuracy(const ConfusionMatrix& cm) {
    require_total(cm);
    double acc = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto row = cm.row_sum(c);
        if (row == 0) continue;
        acc += static_cast<double>(cm(c, c)) / static_cast<double>(row);
        ++present;
    }
    return acc / static_cast<double>(present);
}

// Row-by-column sums need 128 bits to compare exactly against total^2.
__extension__ typedef unsigned __int128 u128;

double kappa(const ConfusionMatrix& cm) {
    const auto total = require_total(cm);
    u128 chance = 0;
    for (std::size_t c = 0; c < cm.classes(); ++c) chance += static_cast<u128>(cm.row_sum(c)) * cm.col_sum(c);
    const auto total_sq = static_cast<u128>(total) * total;
    if (chance == total_sq) return cm.trace() == total ? 1.0 : 0.0;

    const double t = static_cast<double>(total);
    const double p_o = static_cast<double>(cm.trace()) / t;
    const double p_e = static_cast<double>(chance) / (t * t);
    return (p_o - p_e) / (1.0 - p_e);
}

MetricsReport report(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.n = require_total(cm);
    r.oa = overall_accuracy(cm);
    r.aa = average_accuracy(cm);
    r.kappa = kappa(cm);
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto row = cm.row_sum(c);
        r.per_class.push_back(row == 0 ? std::numeric_limits<double>::quiet_NaN()
                                       : static_cast<double>(cm(c, c)) / static_cast<double>(row));
    }
    return r;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (double a : per_class) per.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
    return {{"oa", oa}, {"aa", aa}, {"kappa", kappa}, {"per_class", per}, {"n", n}};
}

std::string MetricsReport::to_table() const {
    std::string out;
    char line[96];
    auto row = [&](const std::string& name, double value) {
        if (std::isnan(value))
            std::snprintf(line, sizeof line, "%-10s %8s\n", name.c_str(), "-");
        else
            std::snprintf(line, sizeof line, "%-10s %8.2f\n", name.c_str(), 100.0 * value);
        out += line;
    };
    for (std::size_t c = 0; c < per_class.size(); ++c) row("class " + std::to_string(c + 1), per_class[c]);
    row("OA", oa);
    row("AA", aa);
    row("kappa", kappa);
    std::snprintf(line, sizeof line, "%-10s %8llu\n", "n", static_cast<unsigned long long>(n));
    out += line;
    return out;
}

}  // namespace sstatl
