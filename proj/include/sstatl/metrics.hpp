#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sstatl {

/// C x C counts indexed (true class, predicted class), classes 1..C stored at
/// 0..C-1.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const { return classes_; }
    std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
    std::uint64_t& operator()(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }

    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(std::size_t truth) const;
    std::uint64_t col_sum(std::size_t predicted) const;

    /// Adds the counts of another matrix with the same class count.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct MetricsReport {
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class;  // NaN for classes with no true samples
    std::uint64_t n = 0;

    nlohmann::json to_json() const;
    /// Aligned table with percentages to two decimals.
    std::string to_table() const;
};

/// Tallies predictions against labels; both use class ids 1..C.
ConfusionMatrix confusion(std::span<const std::uint16_t> predicted, std::span<const std::uint16_t> truth,
                          std::size_t classes);

double overall_accuracy(const ConfusionMatrix& cm);
/// Mean per-class accuracy over classes that have at least one true sample.
double average_accuracy(const ConfusionMatrix& cm);
/// Cohen's kappa. When chance agreement is 1 (all mass in one row and the
/// matching column) kappa is 1 if observed agreement is 1 and 0 otherwise.
double kappa(const ConfusionMatrix& cm);
MetricsReport report(const ConfusionMatrix& cm);

}  // namespace sstatl
