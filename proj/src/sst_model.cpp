#include "sstatl/sst_model.hpp"

#include <algorithm>
#include <cmath>

#include "sstatl/ops.hpp"

namespace sstatl {

// --- config ---------------------------------------------------------------

void SstConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(Errc::invalid_argument, "model config: " + what); };
    if (window < 2 || window % 2 != 0) fail("window must be even and at least 2");
    if (subpatch == 0 || window % subpatch != 0) fail("subpatch size must divide the window size");
    if (bands == 0) fail("bands must be positive");
    if (d_model < 2) fail("d_model must be at least 2");
    if (heads == 0 || d_model % heads != 0) fail("d_model must be divisible by the head count");
    if (layers == 0) fail("need at least one encoder layer");
    if (classes < 2) fail("need at least two classes");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(ln_eps > 0.0)) fail("layer-norm epsilon must be positive");
    if (!(lambda >= 0.0)) fail("lambda must be nonnegative");
}

nlohmann::json SstConfig::to_json() const {
    return {{"window", window},   {"subpatch", subpatch}, {"bands", bands},
            {"d_model", d_model}, {"layers", layers},     {"heads", heads},
            {"d_ff", d_ff},       {"head_hidden", head_hidden}, {"dropout", dropout},
            {"ln_eps", ln_eps},   {"classes", classes},   {"lambda", lambda},
            {"renormalize_calibrated", renormalize_calibrated}};
}

void SstConfig::merge_json(const nlohmann::json& j) {
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
        take("window", window);
        take("subpatch", subpatch);
        take("bands", bands);
        take("d_model", d_model);
        take("layers", layers);
        take("heads", heads);
        take("d_ff", d_ff);
        take("head_hidden", head_hidden);
        take("dropout", dropout);
        take("ln_eps", ln_eps);
        take("classes", classes);
        take("lambda", lambda);
        take("renormalize_calibrated", renormalize_calibrated);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_header, std::string("model config: ") + e.what());
    }
}

// --- model ----------------------------------------------------------------

namespace {
const char* const layer_names[] = {"W_q", "W_k", "W_v", "W_o", "W_1", "b_1",
                                   "W_2", "b_2", "ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"};
constexpr std::size_t per_layer = std::size(layer_names);
}  // namespace

void SstModel::add_parameter(std::string name, Shape shape, ParamGroup group, double bound, Rng& rng) {
    Parameter p{std::move(name), Tensor(shape), Tensor(shape), false};
    if (bound > 0.0)
        for (double& x : p.value.data) x = rng.uniform(-bound, bound);
    params_.push_back(std::move(p));
    groups_.push_back(group);
}

SstModel::SstModel(SstConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.d_model, ff = config_.ff_width(), hidden = config_.hidden_width();
    auto fan_in = [](std::size_t n) { return std::sqrt(1.0 / static_cast<double>(n)); };

    add_parameter("embed.W_e", {config_.token_width(), d}, {ParamGroup::embed, 0}, fan_in(config_.token_width()), rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        const ParamGroup g{ParamGroup::layer, l};
        add_parameter(prefix + "W_q", {d, d}, g, fan_in(d), rng);
        add_parameter(prefix + "W_k", {d, d}, g, fan_in(d), rng);
        add_parameter(prefix + "W_v", {d, d}, g, fan_in(d), rng);
        add_parameter(prefix + "W_o", {d, d}, g, fan_in(d), rng);
        add_parameter(prefix + "W_1", {d, ff}, g, fan_in(d), rng);
        add_parameter(prefix + "b_1", {ff}, g, 0.0, rng);
        add_parameter(prefix + "W_2", {ff, d}, g, fan_in(ff), rng);
        add_parameter(prefix + "b_2", {d}, g, 0.0, rng);
        add_parameter(prefix + "ln1.gain", {d}, g, 0.0, rng);
        add_parameter(prefix + "ln1.bias", {d}, g, 0.0, rng);
        add_parameter(prefix + "ln2.gain", {d}, g, 0.0, rng);
        add_parameter(prefix + "ln2.bias", {d}, g, 0.0, rng);
        std::fill(params_[params_.size() - 4].value.data.begin(), params_[params_.size() - 4].value.data.end(), 1.0);
        std::fill(params_[params_.size() - 2].value.data.begin(), params_[params_.size() - 2].value.data.end(), 1.0);
    }
    const ParamGroup head{ParamGroup::head, 0};
    add_parameter("pool.query", {d}, head, 0.0, rng);
    add_parameter("pool.W_k", {d, d}, head, fan_in(d), rng);
    add_parameter("pool.W_v", {d, d}, head, fan_in(d), rng);
    add_parameter("head.W_3", {d, hidden}, head, fan_in(d), rng);
    add_parameter("head.b_3", {hidden}, head, 0.0, rng);
    add_parameter("head.W_4", {hidden, config_.classes}, head, fan_in(hidden), rng);
    add_parameter("head.b_4", {config_.classes}, head, 0.0, rng);
}

std::size_t SstModel::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw Error(Errc::out_of_range, "no parameter named " + std::string(name));
}

Parameter& SstModel::parameter(std::string_view name) { return params_[index_of(name)]; }
const Parameter& SstModel::parameter(std::string_view name) const { return params_[index_of(name)]; }

void SstModel::set_layer_frozen(std::size_t layer, bool frozen) {
    if (layer >= config_.layers) throw Error(Errc::out_of_range, "layer " + std::to_string(layer));
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (groups_[i].kind == ParamGroup::layer && groups_[i].layer_index == layer) params_[i].frozen = frozen;
}

void SstModel::set_embed_frozen(bool frozen) {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (groups_[i].kind == ParamGroup::embed) params_[i].frozen = frozen;
}

void SstModel::set_head_frozen(bool frozen) {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (groups_[i].kind == ParamGroup::head) params_[i].frozen = frozen;
}

bool SstModel::layer_frozen(std::size_t layer) const {
    if (layer >= config_.layers) throw Error(Errc::out_of_range, "layer " + std::to_string(layer));
    return params_[1 + layer * per_layer].frozen;
}

bool SstModel::embed_frozen() const { return params_.front().frozen; }
bool SstModel::head_frozen() const { return params_.back().frozen; }

void SstModel::unfreeze_all() {
    for (Parameter& p : params_) p.frozen = false;
}

void SstModel::reset_head(std::size_t classes, std::uint64_t seed) {
    if (classes < 2) throw Error(Errc::invalid_argument, "need at least two classes");
    config_.classes = classes;
    Rng rng(seed);
    const std::size_t hidden = config_.hidden_width();
    const double bound = std::sqrt(1.0 / static_cast<double>(hidden));
    Parameter& w4 = parameter("head.W_4");
    Parameter& b4 = parameter("head.b_4");
    w4.value = Tensor({hidden, classes});
    for (double& x : w4.value.data) x = rng.uniform(-bound, bound);
    w4.grad = Tensor(w4.value.shape);
    b4.value = Tensor({classes});
    b4.grad = Tensor({classes});
}

Var SstModel::forward(Tape& tape, std::span<const PatchWindow> windows, bool training, std::uint64_t seed,
                      bool with_grad, std::vector<Var>* bound, ForwardTrace* trace) const {
    using namespace ops;
    const SstConfig& c = config_;
    if (windows.empty()) throw Error(Errc::invalid_argument, "forward on an empty batch");
    const std::size_t tokens = c.tokens(), width = c.token_width(), batch = windows.size();

    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const Parameter& p : params_)
        vars.push_back(with_grad && !p.frozen ? tape.variable(p.value) : tape.constant(p.value));

    Tensor unfolded({batch * tokens, width});
    Tensor pos = positional_encoding(tokens, c.d_model);
    Tensor pos_tiled({batch * tokens, c.d_model});
    for (std::size_t b = 0; b < batch; ++b) {
        const PatchWindow& w = windows[b];
        if (w.size != c.window || w.bands != c.bands)
            throw Error(Errc::shape_mismatch, "window " + std::to_string(w.size) + "x" + std::to_string(w.size) + "x" +
                                                  std::to_string(w.bands) + " does not match the model");
        Tensor u = unfold_window(w, c.subpatch);
        std::copy(u.data.begin(), u.data.end(), unfolded.data.begin() + static_cast<std::ptrdiff_t>(b * tokens * width));
        std::copy(pos.data.begin(), pos.data.end(),
                  pos_tiled.data.begin() + static_cast<std::ptrdiff_t>(b * tokens * c.d_model));
    }

    Var z = add(tape, matmul(tape, tape.constant(std::move(unfolded)), vars[0]), tape.constant(std::move(pos_tiled)));

    BlockOptions opts;
    opts.attention = {c.heads, c.lambda, c.renormalize_calibrated};
    opts.tokens = tokens;
    opts.dropout = c.dropout;
    opts.ln_eps = c.ln_eps;
    opts.training = training;
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::size_t o = 1 + l * per_layer;
        const EncoderVars ev{vars[o],     vars[o + 1], vars[o + 2], vars[o + 3], vars[o + 4],  vars[o + 5],
                             vars[o + 6], vars[o + 7], vars[o + 8], vars[o + 9], vars[o + 10], vars[o + 11]};
        opts.seed = derive_seed(seed, l);
        AttentionTrace* at = nullptr;
        if (trace) at = &trace->attention.emplace_back();
        z = encoder_block(tape, z, ev, opts, at);
        if (trace) trace->layer_outputs.push_back(tape.value(z));
    }

    const std::size_t h = 1 + c.layers * per_layer;
    Var keys = matmul(tape, z, vars[h + 1]);
    Var values = matmul(tape, z, vars[h + 2]);
    Var pooled = query_pool(tape, vars[h], keys, values, tokens);
    Var hidden = relu(tape, add(tape, matmul(tape, pooled, vars[h + 3]), vars[h + 4]));
    Var logits = add(tape, matmul(tape, hidden, vars[h + 5]), vars[h + 6]);
    Var probs = softmax(tape, logits, 1);
    if (bound) *bound = std::move(vars);
    return probs;
}

Tensor SstModel::predict(std::span<const PatchWindow> windows, ForwardTrace* trace) const {
    Tape tape;
    return tape.value(forward(tape, windows, false, 0, false, nullptr, trace));
}

Checkpoint SstModel::to_checkpoint() const {
    Checkpoint ck;
    ck.config = config_.to_json();
    ck.parameters = params_;
    for (Parameter& p : ck.parameters) p.grad = Tensor();
    return ck;
}

SstModel SstModel::from_checkpoint(const Checkpoint& checkpoint) {
    SstConfig config;
    config.merge_json(checkpoint.config);
    SstModel model(config, 0);
    if (checkpoint.parameters.size() != model.params_.size())
        throw Error(Errc::invalid_header, "checkpoint has " + std::to_string(checkpoint.parameters.size()) +
                                              " parameters, model expects " + std::to_string(model.params_.size()));
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const Parameter& src = checkpoint.parameters[i];
        Parameter& dst = model.params_[i];
        if (src.name != dst.name || src.value.shape != dst.value.shape)
            throw Error(Errc::invalid_header, "checkpoint parameter " + src.name + " does not match " + dst.name + " " +
                                                  shape_string(dst.value.shape));
        dst.value = src.value;
        dst.frozen = src.frozen;
    }
    return model;
}

// --- building blocks --------------------------------------------------------

Tensor unfold_window(const PatchWindow& window, std::size_t subpatch) {
    const std::size_t W = window.size, k = window.bands;
    if (subpatch == 0 || W % subpatch != 0)
        throw Error(Errc::invalid_argument, "subpatch size " + std::to_string(subpatch) + " does not divide window " +
                                                std::to_string(W));
    if (window.values.size() != W * W * k) throw Error(Errc::shape_mismatch, "window value count");
    const std::size_t per_side = W / subpatch, width = subpatch * subpatch * k;
    Tensor out({per_side * per_side, width});
    for (std::size_t u = 0; u < per_side; ++u)
        for (std::size_t v = 0; v < per_side; ++v) {
            double* row = out.data.data() + (u * per_side + v) * width;
            for (std::size_t m = 0; m < subpatch; ++m)
                for (std::size_t n = 0; n < subpatch; ++n) {
                    const float* src = window.values.data() + ((u * subpatch + m) * W + (v * subpatch + n)) * k;
                    std::copy(src, src + k, row + (m * subpatch + n) * k);
                }
        }
    return out;
}

Tensor embed_patches(const PatchWindow& window, const Tensor& kernel, std::size_t subpatch) {
    Tape tape;
    Var x = tape.constant(unfold_window(window, subpatch));
    return tape.value(ops::matmul(tape, x, tape.constant(kernel)));
}

Tensor positional_encoding(std::size_t tokens, std::size_t d_model) {
    if (d_model < 2) throw Error(Errc::invalid_argument, "positional encoding needs d_model >= 2");
    Tensor out({tokens, d_model});
    for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t col = 0; col < d_model; ++col) {
            const std::size_t pair = col / 2;
            const double angle = static_cast<double>(i) /
                                 std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(d_model));
            out(i, col) = col % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() || k.rows() != v.rows())
        throw Error(Errc::shape_mismatch, "attention shapes " + shape_string(q.shape) + ", " + shape_string(k.shape) +
                                              ", " + shape_string(v.shape));
    using namespace ops;
    Tape tape;
    Var scores = matmul(tape, tape.constant(q), transpose(tape, tape.constant(k)));
    Var weights = softmax(tape, scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(q.cols()))), 1);
    return tape.value(matmul(tape, weights, tape.constant(v)));
}

Tensor calibrated_attention(const Tensor& q, const Tensor& k, const Tensor& v, double lambda, bool renormalize) {
    if (q.rank() != 2 || k.rank() != 2) throw Error(Errc::shape_mismatch, "attention expects matrices");
    Tape tape;
    Var out = multi_head_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), q.rows(), k.rows(),
                                   {1, lambda, renormalize});
    return tape.value(out);
}

Tensor token_uncertainty(const Tensor& weights) {
    if (weights.rank() != 3) throw Error(Errc::shape_mismatch, "token_uncertainty expects [heads x N x N]");
    const std::size_t heads = weights.shape[0], n = weights.shape[1], keys = weights.shape[2];
    Tensor out({n});
    const double norm = keys > 1 ? std::log(static_cast<double>(keys)) : 1.0;
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = weights.data.data() + (h * n + i) * keys;
            double total = 0.0, entropy = 0.0;
            for (std::size_t j = 0; j < keys; ++j) {
                total += row[j];
                if (row[j] > 0.0) entropy -= row[j] * std::log(row[j]);
            }
            if (std::abs(total - 1.0) > 1e-6)
                throw Error(Errc::invalid_argument, "attention row sums to " + std::to_string(total));
            out.data[i] += keys > 1 ? entropy / norm : 0.0;
        }
    for (double& u : out.data) u /= static_cast<double>(heads);
    return out;
}

Var encoder_block(Tape& tape, Var z, const EncoderVars& p, const BlockOptions& options, AttentionTrace* trace) {
    using namespace ops;
    Var q = matmul(tape, z, p.w_q);
    Var k = matmul(tape, z, p.w_k);
    Var v = matmul(tape, z, p.w_v);
    Var heads = multi_head_attention(tape, q, k, v, options.tokens, options.tokens, options.attention, trace);
    Var attended = matmul(tape, heads, p.w_o);
    Var z1 = layer_norm(tape, add(tape, z, dropout(tape, attended, options.dropout, options.training, derive_seed(options.seed, 0))),
                        p.ln1_gain, p.ln1_bias, options.ln_eps);
    Var inner = relu(tape, add(tape, matmul(tape, z1, p.w_1), p.b_1));
    Var ff = add(tape, matmul(tape, inner, p.w_2), p.b_2);
    return layer_norm(tape, add(tape, z1, dropout(tape, ff, options.dropout, options.training, derive_seed(options.seed, 1))),
                      p.ln2_gain, p.ln2_bias, options.ln_eps);
}

Tensor cross_attention_pool(const Tensor& z, const Tensor& query, const Tensor& w_k, const Tensor& w_v) {
    using namespace ops;
    Tape tape;
    Var zz = tape.constant(z);
    Var keys = matmul(tape, zz, tape.constant(w_k));
    Var values = matmul(tape, zz, tape.constant(w_v));
    Var pooled = query_pool(tape, tape.constant(query), keys, values, z.rows());
    Tensor out = tape.value(pooled);
    out.shape = {out.size()};
    return out;
}

Tensor classify(const Tensor& pooled, const Tensor& w_3, const Tensor& b_3, const Tensor& w_4, const Tensor& b_4) {
    using namespace ops;
    Tape tape;
    Var x = tape.constant(Tensor({1, pooled.size()}, pooled.data));
    Var hidden = relu(tape, add(tape, matmul(tape, x, tape.constant(w_3)), tape.constant(b_3)));
    Var logits = add(tape, matmul(tape, hidden, tape.constant(w_4)), tape.constant(b_4));
    Tensor out = tape.value(softmax(tape, logits, 1));
    out.shape = {out.size()};
    return out;
}

}  // namespace sstatl
