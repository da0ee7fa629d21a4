#pragma once
// Finite-difference gradient checks shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sstatl/ops.hpp"
#include "sstatl/rng.hpp"
#include "sstatl/tape.hpp"

namespace testing {

using sstatl::Tape;
using sstatl::Tensor;
using sstatl::Var;

inline Tensor random_tensor(sstatl::Shape shape, sstatl::Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = scale * rng.normal();
    return t;
}

inline double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double scale = std::max(norm(a), norm(b));
    return scale == 0 ? 0.0 : norm(d) / scale;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central differences of L = sum(f(x) * R) for a fixed random R, compared with
// the tape gradient. Returns the worst norm-wise relative error over inputs.
inline double gradient_error(const Builder& f, std::vector<Tensor> inputs, double h = 1e-5, std::uint64_t seed = 99) {
    Tensor weights;
    auto loss = [&](Tape& tape, const std::vector<Var>& vars) {
        Var out = f(tape, vars);
        if (weights.shape.empty()) {
            sstatl::Rng rng(seed);
            weights = random_tensor(tape.value(out).shape, rng);
        }
        return sstatl::ops::sum(tape, sstatl::ops::mul(tape, out, tape.constant(weights)));
    };
    auto evaluate = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& x : xs) vars.push_back(tape.constant(x));
        return tape.value(loss(tape, vars))[0];
    };

    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
    tape.backward(loss(tape, vars));

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::vector<double> analytic = tape.grad(vars[i]).data;
        std::vector<double> numeric(inputs[i].size());
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double keep = inputs[i][j];
            inputs[i][j] = keep + h;
            const double up = evaluate(inputs);
            inputs[i][j] = keep - h;
            const double down = evaluate(inputs);
            inputs[i][j] = keep;
            numeric[j] = (up - down) / (2 * h);
        }
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

}  // namespace testing
