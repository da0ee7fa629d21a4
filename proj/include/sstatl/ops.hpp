#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sstatl/tape.hpp"

/// Differentiable tensor operations recorded on a Tape.
namespace sstatl::ops {

/// [m x n] . [n x p] -> [m x p]
Var matmul(Tape& tape, Var a, Var b);

/// Elementwise sum. `b` may also be a 1-D tensor matching the last axis of
/// `a`, in which case it is broadcast over the leading axes.
Var add(Tape& tape, Var a, Var b);

/// Elementwise product of equal shapes.
Var mul(Tape& tape, Var a, Var b);

Var scale(Tape& tape, Var a, double factor);
Var relu(Tape& tape, Var a);

/// Inverted dropout: survivors are scaled by 1/(1-rate). Identity when not
/// training. rate must lie in [0, 1).
Var dropout(Tape& tape, Var a, double rate, bool training, std::uint64_t seed);

/// Numerically stable softmax along `axis`.
Var softmax(Tape& tape, Var a, std::size_t axis);

/// Normalizes over the last axis, then applies gain and bias (both 1-D, sized
/// to the last axis).
Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps);

Var concat(Tape& tape, const std::vector<Var>& parts, std::size_t axis);
Var slice(Tape& tape, Var a, std::size_t axis, std::size_t start, std::size_t length);
Var transpose(Tape& tape, Var a);
Var reshape(Tape& tape, Var a, Shape shape);

/// Sum of all elements, as a scalar of shape [1].
Var sum(Tape& tape, Var a);

/// Mean categorical cross-entropy of probability rows against class indices in
/// [0, C). Probabilities are clamped below at 1e-12 before the log.
Var cross_entropy(Tape& tape, Var probs, std::span<const std::size_t> targets);

inline constexpr double log_clamp = 1e-12;

}  // namespace sstatl::ops
