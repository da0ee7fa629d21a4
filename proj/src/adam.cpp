#include "sstatl/adam.hpp"

#include <cmath>

namespace sstatl {

double Adam::learning_rate() const {
    if (config_.mode == DecayMode::learning_rate)
        return config_.lr / (1.0 + config_.decay * static_cast<double>(t_));
    return config_.lr;
}

void Adam::step(std::span<Parameter> params) {
    if (m_.empty()) {
        for (const Parameter& p : params) {
            m_.emplace_back(p.value.shape);
            v_.emplace_back(p.value.shape);
        }
    }
    if (m_.size() != params.size())
        throw Error(Errc::shape_mismatch, "optimizer state holds " + std::to_string(m_.size()) + " moments for " +
                                              std::to_string(params.size()) + " parameters");
    ++t_;
    const double lr = learning_rate();
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const double l2 = config_.mode == DecayMode::weight ? config_.decay : 0.0;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (p.frozen) continue;
        require_shape(m_[i], p.value.shape, "adam moment");
        require_shape(p.grad, p.value.shape, "adam gradient");
        auto& m = m_[i].data;
        auto& v = v_[i].data;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad.data[j] + l2 * p.value.data[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            p.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

}  // namespace sstatl
