#include "sstatl/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace sstatl {

namespace {

struct AttentionSaved {
    std::size_t groups, nq, nk, heads, dq, dv, dqh, dvh;
    double scale, lambda;
    bool renormalize;
    std::vector<double> probs;      // [G][H][Nq][Nk] softmax weights
    std::vector<double> applied;    // [G][H][Nq][Nk] weights multiplied into v
    std::vector<double> factor;     // [G][Nq] 1 + lambda * U
    std::vector<double> row_total;  // [G][H][Nq] sum of scaled row (renormalize only)
};

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : 0.0; }

}  // namespace

Var multi_head_attention(Tape& tape, Var q, Var k, Var v, std::size_t q_tokens, std::size_t k_tokens,
                         const AttentionOptions& options, AttentionTrace* trace) {
    const Tensor& Q = tape.value(q);
    const Tensor& K = tape.value(k);
    const Tensor& V = tape.value(v);
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2)
        throw Error(Errc::shape_mismatch, "attention expects matrices");
    if (q_tokens == 0 || k_tokens == 0 || Q.rows() % q_tokens != 0 || K.rows() % k_tokens != 0 ||
        Q.rows() / q_tokens != K.rows() / k_tokens)
        throw Error(Errc::shape_mismatch, "attention sequence lengths do not tile the inputs");
    if (K.cols() != Q.cols()) throw Error(Errc::shape_mismatch, "attention query and key widths differ");
    if (V.rows() != K.rows()) throw Error(Errc::shape_mismatch, "attention key and value row counts differ");
    if (options.heads == 0 || Q.cols() % options.heads != 0 || V.cols() % options.heads != 0)
        throw Error(Errc::shape_mismatch, "attention widths are not divisible by the head count");
    if (!(options.lambda >= 0.0)) throw Error(Errc::invalid_argument, "calibration lambda must be nonnegative");

    auto s = std::make_shared<AttentionSaved>();
    s->groups = Q.rows() / q_tokens;
    s->nq = q_tokens;
    s->nk = k_tokens;
    s->heads = options.heads;
    s->dq = Q.cols();
    s->dv = V.cols();
    s->dqh = s->dq / s->heads;
    s->dvh = s->dv / s->heads;
    s->scale = 1.0 / std::sqrt(static_cast<double>(s->dqh));
    s->lambda = options.lambda;
    s->renormalize = options.renormalize;
    const std::size_t G = s->groups, H = s->heads, Nq = s->nq, Nk = s->nk;
    s->probs.resize(G * H * Nq * Nk);
    s->applied.resize(G * H * Nq * Nk);
    s->factor.resize(G * Nq);
    s->row_total.assign(G * H * Nq, 1.0);
    const double log_nk = std::log(static_cast<double>(Nk));

    Tensor out({G * Nq, s->dv});
    std::vector<double> entropy(H * Nq);
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < Nq; ++i) {
                const double* qi = Q.data.data() + (g * Nq + i) * s->dq + h * s->dqh;
                double* a = s->probs.data() + ((g * H + h) * Nq + i) * Nk;
                for (std::size_t j = 0; j < Nk; ++j) {
                    const double* kj = K.data.data() + (g * Nk + j) * s->dq + h * s->dqh;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < s->dqh; ++t) acc += qi[t] * kj[t];
                    a[j] = acc * s->scale;
                }
                double mx = a[0];
                for (std::size_t j = 1; j < Nk; ++j) mx = std::max(mx, a[j]);
                double total = 0.0;
                for (std::size_t j = 0; j < Nk; ++j) {
                    a[j] = std::exp(a[j] - mx);
                    total += a[j];
                }
                double ent = 0.0;
                for (std::size_t j = 0; j < Nk; ++j) {
                    a[j] /= total;
                    ent -= a[j] * safe_log(a[j]);
                }
                entropy[h * Nq + i] = Nk > 1 ? ent / log_nk : 0.0;
            }
        }
        for (std::size_t i = 0; i < Nq; ++i) {
            double u = 0.0;
            for (std::size_t h = 0; h < H; ++h) u += entropy[h * Nq + i];
            u /= static_cast<double>(H);
            s->factor[g * Nq + i] = 1.0 + s->lambda * u;
            if (trace) {
                if (i == 0) trace->uncertainty.emplace_back(Shape{Nq});
                trace->uncertainty.back().data[i] = u;
            }
        }
        if (trace) {
            Tensor w({H, Nq, Nk});
            std::copy_n(s->probs.data() + g * H * Nq * Nk, H * Nq * Nk, w.data.data());
            trace->weights.push_back(std::move(w));
        }
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < Nq; ++i) {
                const std::size_t row = (g * H + h) * Nq + i;
                const double* a = s->probs.data() + row * Nk;
                double* b = s->applied.data() + row * Nk;
                const double c = s->factor[g * Nq + i];
                for (std::size_t j = 0; j < Nk; ++j) b[j] = a[j] * c;
                if (s->renormalize) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < Nk; ++j) total += b[j];
                    s->row_total[row] = total;
                    for (std::size_t j = 0; j < Nk; ++j) b[j] /= total;
                }
                double* o = out.data.data() + (g * Nq + i) * s->dv + h * s->dvh;
                for (std::size_t j = 0; j < Nk; ++j) {
                    const double* vj = V.data.data() + (g * Nk + j) * s->dv + h * s->dvh;
                    for (std::size_t t = 0; t < s->dvh; ++t) o[t] += b[j] * vj[t];
                }
            }
        }
    }

    return tape.record(std::move(out), {q, k, v}, [q, k, v, s](Tape& tape, const Tensor& grad) {
        const Tensor& Q = tape.value(q);
        const Tensor& K = tape.value(k);
        const Tensor& V = tape.value(v);
        const std::size_t G = s->groups, H = s->heads, Nq = s->nq, Nk = s->nk;
        const double log_nk = std::log(static_cast<double>(Nk));
        const bool want_q = tape.requires_grad(q), want_k = tape.requires_grad(k), want_v = tape.requires_grad(v);
        std::vector<double>* gq = want_q ? &tape.grad_buffer(q) : nullptr;
        std::vector<double>* gk = want_k ? &tape.grad_buffer(k) : nullptr;
        std::vector<double>* gv = want_v ? &tape.grad_buffer(v) : nullptr;

        std::vector<double> d_scaled(H * Nq * Nk);  // gradient w.r.t. factor * probs
        std::vector<double> d_factor(Nq);
        std::vector<double> d_probs(Nk);
        for (std::size_t g = 0; g < G; ++g) {
            std::fill(d_factor.begin(), d_factor.end(), 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t i = 0; i < Nq; ++i) {
                    const std::size_t row = (g * H + h) * Nq + i;
                    const double* go = grad.data.data() + (g * Nq + i) * s->dv + h * s->dvh;
                    const double* b = s->applied.data() + row * Nk;
                    double* ds = d_scaled.data() + (h * Nq + i) * Nk;
                    for (std::size_t j = 0; j < Nk; ++j) {
                        const double* vj = V.data.data() + (g * Nk + j) * s->dv + h * s->dvh;
                        double acc = 0.0;
                        for (std::size_t t = 0; t < s->dvh; ++t) acc += go[t] * vj[t];
                        ds[j] = acc;
                        if (gv) {
                            double* gvj = gv->data() + (g * Nk + j) * s->dv + h * s->dvh;
                            for (std::size_t t = 0; t < s->dvh; ++t) gvj[t] += b[j] * go[t];
                        }
                    }
                    if (s->renormalize) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < Nk; ++j) dot += b[j] * ds[j];
                        for (std::size_t j = 0; j < Nk; ++j) ds[j] = (ds[j] - dot) / s->row_total[row];
                    }
                    const double* a = s->probs.data() + row * Nk;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < Nk; ++j) acc += a[j] * ds[j];
                    d_factor[i] += acc;
                }
            }
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t i = 0; i < Nq; ++i) {
                    const std::size_t row = (g * H + h) * Nq + i;
                    const double* a = s->probs.data() + row * Nk;
                    const double* ds = d_scaled.data() + (h * Nq + i) * Nk;
                    const double c = s->factor[g * Nq + i];
                    const double d_entropy =
                        Nk > 1 ? s->lambda * d_factor[i] / static_cast<double>(H) / log_nk : 0.0;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < Nk; ++j) {
                        d_probs[j] = c * ds[j] - d_entropy * (safe_log(a[j]) + 1.0);
                        dot += a[j] * d_probs[j];
                    }
                    const double* qi = Q.data.data() + (g * Nq + i) * s->dq + h * s->dqh;
                    for (std::size_t j = 0; j < Nk; ++j) {
                        const double d_score = a[j] * (d_probs[j] - dot) * s->scale;
                        if (d_score == 0.0) continue;
                        const double* kj = K.data.data() + (g * Nk + j) * s->dq + h * s->dqh;
                        if (gq) {
                            double* gqi = gq->data() + (g * Nq + i) * s->dq + h * s->dqh;
                            for (std::size_t t = 0; t < s->dqh; ++t) gqi[t] += d_score * kj[t];
                        }
                        if (gk) {
                            double* gkj = gk->data() + (g * Nk + j) * s->dq + h * s->dqh;
                            for (std::size_t t = 0; t < s->dqh; ++t) gkj[t] += d_score * qi[t];
                        }
                    }
                }
            }
        }
    });
}

Var query_pool(Tape& tape, Var query, Var k, Var v, std::size_t tokens) {
    const Tensor& q = tape.value(query);
    const Tensor& K = tape.value(k);
    const Tensor& V = tape.value(v);
    if (q.rank() != 1 || K.rank() != 2 || V.rank() != 2 || K.cols() != q.size() || V.rows() != K.rows())
        throw Error(Errc::shape_mismatch, "query_pool shapes " + shape_string(q.shape) + ", " + shape_string(K.shape) +
                                              ", " + shape_string(V.shape));
    if (tokens == 0 || K.rows() % tokens != 0)
        throw Error(Errc::shape_mismatch, "query_pool sequence length does not tile the keys");
    const std::size_t G = K.rows() / tokens, d = q.size(), dv = V.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    auto weights = std::make_shared<std::vector<double>>(G * tokens);
    Tensor out({G, dv});
    for (std::size_t g = 0; g < G; ++g) {
        double* a = weights->data() + g * tokens;
        for (std::size_t j = 0; j < tokens; ++j) {
            const double* kj = K.data.data() + (g * tokens + j) * d;
            double acc = 0.0;
            for (std::size_t t = 0; t < d; ++t) acc += q.data[t] * kj[t];
            a[j] = acc * scale;
        }
        double mx = a[0];
        for (std::size_t j = 1; j < tokens; ++j) mx = std::max(mx, a[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
            a[j] = std::exp(a[j] - mx);
            total += a[j];
        }
        for (std::size_t j = 0; j < tokens; ++j) a[j] /= total;
        double* o = out.data.data() + g * dv;
        for (std::size_t j = 0; j < tokens; ++j) {
            const double* vj = V.data.data() + (g * tokens + j) * dv;
            for (std::size_t t = 0; t < dv; ++t) o[t] += a[j] * vj[t];
        }
    }

    return tape.record(std::move(out), {query, k, v}, [query, k, v, tokens, G, d, dv, scale, weights](
                                                          Tape& tape, const Tensor& grad) {
        const Tensor& q = tape.value(query);
        const Tensor& K = tape.value(k);
        const Tensor& V = tape.value(v);
        std::vector<double>* gq = tape.requires_grad(query) ? &tape.grad_buffer(query) : nullptr;
        std::vector<double>* gk = tape.requires_grad(k) ? &tape.grad_buffer(k) : nullptr;
        std::vector<double>* gv = tape.requires_grad(v) ? &tape.grad_buffer(v) : nullptr;
        std::vector<double> da(tokens);
        for (std::size_t g = 0; g < G; ++g) {
            const double* a = weights->data() + g * tokens;
            const double* go = grad.data.data() + g * dv;
            double dot = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) {
                const double* vj = V.data.data() + (g * tokens + j) * dv;
                double acc = 0.0;
                for (std::size_t t = 0; t < dv; ++t) acc += go[t] * vj[t];
                da[j] = acc;
                dot += a[j] * acc;
                if (gv) {
                    double* gvj = gv->data() + (g * tokens + j) * dv;
                    for (std::size_t t = 0; t < dv; ++t) gvj[t] += a[j] * go[t];
                }
            }
            for (std::size_t j = 0; j < tokens; ++j) {
                const double d_score = a[j] * (da[j] - dot) * scale;
                const double* kj = K.data.data() + (g * tokens + j) * d;
                if (gq)
                    for (std::size_t t = 0; t < d; ++t) (*gq)[t] += d_score * kj[t];
                if (gk) {
                    double* gkj = gk->data() + (g * tokens + j) * d;
                    for (std::size_t t = 0; t < d; ++t) gkj[t] += d_score * q.data[t];
                }
            }
        }
    });
}

}  // namespace sstatl
