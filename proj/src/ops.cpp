#include "sstatl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sstatl/rng.hpp"

namespace sstatl::ops {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw Error(Errc::shape_mismatch, std::string(what) + " expects a matrix, got " + shape_string(t.shape));
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t length = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw Error(Errc::out_of_range, "axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.shape[0], n = A.shape[1], p = B.shape[1];
    if (B.shape[0] != n)
        throw Error(Errc::shape_mismatch, "matmul inner dimensions " + shape_string(A.shape) + " . " + shape_string(B.shape));
    Tensor out({m, p});
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out.data.data() + i * p;
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = A.data[i * n + k];
            const double* brow = B.data.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) o[j] += aik * brow[j];
        }
    }
    return tape.record(std::move(out), {a, b}, [a, b, m, n, p](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad_buffer(a);
            // ga += g . B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data.data() + i * p;
                for (std::size_t k = 0; k < n; ++k) {
                    const double* brow = B.data.data() + k * p;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                    ga[i * n + k] += acc;
                }
            }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_buffer(b);
            // gb += A^T . g
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data.data() + i * p;
                for (std::size_t k = 0; k < n; ++k) {
                    const double aik = A.data[i * n + k];
                    double* gbrow = gb.data() + k * p;
                    for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Var add(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    if (A.shape == B.shape) {
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
        return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
            for (Var v : {a, b}) {
                if (!t.requires_grad(v)) continue;
                auto& gv = t.grad_buffer(v);
                for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g.data[i];
            }
        });
    }
    if (B.rank() != 1 || A.rank() == 0 || B.shape[0] != A.shape.back())
        throw Error(Errc::shape_mismatch, "add " + shape_string(A.shape) + " + " + shape_string(B.shape));
    const std::size_t width = B.shape[0];
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i % width];
    return tape.record(std::move(out), {a, b}, [a, b, width](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g.data[i];
        }
    });
}

Var mul(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    if (A.shape != B.shape)
        throw Error(Errc::shape_mismatch, "mul " + shape_string(A.shape) + " * " + shape_string(B.shape));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i] * B.data[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g.data[i] * A.data[i];
        }
    });
}

Var scale(Tape& tape, Var a, double factor) {
    Tensor out = tape.value(a);
    for (double& x : out.data) x *= factor;
    return tape.record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i] * factor;
    });
}

Var relu(Tape& tape, Var a) {
    Tensor out = tape.value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (A.data[i] > 0.0) ga[i] += g.data[i];
    });
}

Var dropout(Tape& tape, Var a, double rate, bool training, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw Error(Errc::invalid_argument, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return a;
    const Tensor& A = tape.value(a);
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(A.size());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
    return tape.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i] * mask[i];
    });
}

Var softmax(Tape& tape, Var a, std::size_t axis) {
    const Tensor& A = tape.value(a);
    const AxisSplit s = split_axis(A.shape, axis);
    Tensor out(A.shape);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            double mx = A.data[base];
            for (std::size_t j = 1; j < s.length; ++j) mx = std::max(mx, A.data[base + j * s.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < s.length; ++j) {
                const double e = std::exp(A.data[base + j * s.inner] - mx);
                out.data[base + j * s.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < s.length; ++j) out.data[base + j * s.inner] /= total;
        }
    }
    Tensor saved = out;
    return tape.record(std::move(out), {a}, [a, s, y = std::move(saved)](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.length * s.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < s.length; ++j) dot += g.data[base + j * s.inner] * y.data[base + j * s.inner];
                for (std::size_t j = 0; j < s.length; ++j) {
                    const std::size_t idx = base + j * s.inner;
                    ga[idx] += y.data[idx] * (g.data[idx] - dot);
                }
            }
        }
    });
}

Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps) {
    const Tensor& X = tape.value(x);
    const Tensor& G = tape.value(gain);
    const Tensor& B = tape.value(bias);
    if (X.rank() == 0) throw Error(Errc::shape_mismatch, "layer_norm on a scalar");
    const std::size_t width = X.shape.back();
    require_shape(G, {width}, "layer_norm gain");
    require_shape(B, {width}, "layer_norm bias");
    const std::size_t rows = X.size() / width;

    Tensor out(X.shape);
    std::vector<double> normalized(X.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = X.data.data() + r * width;
        double mean = 0.0;
        for (std::size_t j = 0; j < width; ++j) mean += xr[j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(width);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            const double xh = (xr[j] - mean) * inv_std[r];
            normalized[r * width + j] = xh;
            out.data[r * width + j] = G.data[j] * xh + B.data[j];
        }
    }
    return tape.record(std::move(out), {x, gain, bias},
                       [x, gain, bias, rows, width, xhat = std::move(normalized), inv_std = std::move(inv_std)](
                           Tape& t, const Tensor& g) {
                           const Tensor& G = t.value(gain);
                           if (t.requires_grad(gain)) {
                               auto& gg = t.grad_buffer(gain);
                               for (std::size_t i = 0; i < g.size(); ++i) gg[i % width] += g.data[i] * xhat[i];
                           }
                           if (t.requires_grad(bias)) {
                               auto& gb = t.grad_buffer(bias);
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g.data[i];
                           }
                           if (!t.requires_grad(x)) return;
                           auto& gx = t.grad_buffer(x);
                           const double inv_w = 1.0 / static_cast<double>(width);
                           std::vector<double> dxh(width);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double mean_d = 0.0, mean_dx = 0.0;
                               for (std::size_t j = 0; j < width; ++j) {
                                   dxh[j] = g.data[r * width + j] * G.data[j];
                                   mean_d += dxh[j];
                                   mean_dx += dxh[j] * xhat[r * width + j];
                               }
                               mean_d *= inv_w;
                               mean_dx *= inv_w;
                               for (std::size_t j = 0; j < width; ++j)
                                   gx[r * width + j] += inv_std[r] * (dxh[j] - mean_d - xhat[r * width + j] * mean_dx);
                           }
                       });
}

Var concat(Tape& tape, const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw Error(Errc::invalid_argument, "concat of nothing");
    const Shape& first = tape.value(parts.front()).shape;
    const AxisSplit base = split_axis(first, axis);
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (Var p : parts) {
        const Shape& sh = tape.value(p).shape;
        if (sh.size() != first.size()) throw Error(Errc::shape_mismatch, "concat rank mismatch");
        for (std::size_t i = 0; i < sh.size(); ++i)
            if (i != axis && sh[i] != first[i])
                throw Error(Errc::shape_mismatch, "concat " + shape_string(first) + " with " + shape_string(sh));
        lengths.push_back(sh[axis]);
        total += sh[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& P = tape.value(parts[k]);
        const std::size_t chunk = lengths[k] * base.inner;
        for (std::size_t o = 0; o < base.outer; ++o)
            std::copy_n(P.data.data() + o * chunk, chunk, out.data.data() + (o * total + offset) * base.inner);
        offset += lengths[k];
    }
    return tape.record(std::move(out), parts, [parts, lengths, base, total](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const std::size_t chunk = lengths[k] * base.inner;
            if (t.requires_grad(parts[k])) {
                auto& gp = t.grad_buffer(parts[k]);
                for (std::size_t o = 0; o < base.outer; ++o) {
                    const double* src = g.data.data() + (o * total + offset) * base.inner;
                    for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
                }
            }
            offset += lengths[k];
        }
    });
}

Var slice(Tape& tape, Var a, std::size_t axis, std::size_t start, std::size_t length) {
    const Tensor& A = tape.value(a);
    const AxisSplit s = split_axis(A.shape, axis);
    if (start + length > s.length)
        throw Error(Errc::out_of_range, "slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                            ") of axis with extent " + std::to_string(s.length));
    Shape out_shape = A.shape;
    out_shape[axis] = length;
    Tensor out(out_shape);
    const std::size_t chunk = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(A.data.data() + (o * s.length + start) * s.inner, chunk, out.data.data() + o * chunk);
    return tape.record(std::move(out), {a}, [a, s, start, chunk](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
            double* dst = ga.data() + (o * s.length + start) * s.inner;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += g.data[o * chunk + i];
        }
    });
}

Var transpose(Tape& tape, Var a) {
    const Tensor& A = tape.value(a);
    require_matrix(A, "transpose");
    const std::size_t m = A.shape[0], n = A.shape[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = A.data[i * n + j];
    return tape.record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g.data[j * m + i];
    });
}

Var reshape(Tape& tape, Var a, Shape shape) {
    const Tensor& A = tape.value(a);
    if (shape_size(shape) != A.size())
        throw Error(Errc::shape_mismatch, "reshape " + shape_string(A.shape) + " to " + shape_string(shape));
    Tensor out(std::move(shape), A.data);
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i];
    });
}

Var sum(Tape& tape, Var a) {
    const Tensor& A = tape.value(a);
    double total = 0.0;
    for (double x : A.data) total += x;
    return tape.record(Tensor({1}, {total}), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (double& x : ga) x += g.data[0];
    });
}

Var cross_entropy(Tape& tape, Var probs, std::span<const std::size_t> targets) {
    const Tensor& P = tape.value(probs);
    require_matrix(P, "cross_entropy");
    const std::size_t batch = P.shape[0], classes = P.shape[1];
    if (targets.size() != batch)
        throw Error(Errc::shape_mismatch, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                              std::to_string(batch) + " rows");
    if (batch == 0) throw Error(Errc::invalid_argument, "cross_entropy on an empty batch");
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        if (targets[i] >= classes)
            throw Error(Errc::out_of_range, "target class " + std::to_string(targets[i]) + " with " +
                                                std::to_string(classes) + " classes");
        double row_sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) row_sum += P(i, c);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw Error(Errc::invalid_argument, "cross_entropy row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
        loss -= std::log(std::max(P(i, targets[i]), log_clamp));
    }
    loss /= static_cast<double>(batch);
    std::vector<std::size_t> saved(targets.begin(), targets.end());
    return tape.record(Tensor({1}, {loss}), {probs}, [probs, classes, targets = std::move(saved)](Tape& t, const Tensor& g) {
        const Tensor& P = t.value(probs);
        auto& gp = t.grad_buffer(probs);
        const double inv_batch = 1.0 / static_cast<double>(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const double p = P.data[i * classes + targets[i]];
            if (p > log_clamp) gp[i * classes + targets[i]] -= g.data[0] * inv_batch / p;
        }
    });
}

}  // namespace sstatl::ops
