#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sstatl/tensor.hpp"

namespace sstatl {

/// A named trainable tensor with its gradient accumulator and freeze flag.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool frozen = false;
};

enum class DecayMode {
    learning_rate,  // lr_t = lr / (1 + decay * t)
    weight,         // L2 term decay * w added to the gradient, constant lr
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay = 1e-6;
    DecayMode mode = DecayMode::learning_rate;
};

/// Bias-corrected Adam. Moments are sized lazily on the first step and bound
/// to the parameter list by position from then on.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// One update with the gradients stored in `params`. Frozen parameters and
    /// their moments are left untouched; the step counter always advances.
    void step(std::span<Parameter> params);

    double learning_rate() const;
    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    AdamConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t t_ = 0;
};

}  // namespace sstatl
