#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sstatl/adam.hpp"
#include "sstatl/attention.hpp"
#include "sstatl/checkpoint.hpp"
#include "sstatl/hsi_data.hpp"
#include "sstatl/rng.hpp"
#include "sstatl/tape.hpp"

namespace sstatl {

struct SstConfig {
    std::size_t window = 8;
    std::size_t subpatch = 2;
    std::size_t bands = 16;
    std::size_t d_model = 56;
    std::size_t layers = 4;
    std::size_t heads = 8;
    std::size_t d_ff = 0;         // 0 selects 4 * d_model
    std::size_t head_hidden = 0;  // 0 selects d_model
    double dropout = 0.1;
    double ln_eps = 1e-6;
    std::size_t classes = 2;
    double lambda = 0.1;
    bool renormalize_calibrated = false;

    std::size_t tokens() const { return (window / subpatch) * (window / subpatch); }
    std::size_t token_width() const { return subpatch * subpatch * bands; }
    std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
    std::size_t hidden_width() const { return head_hidden ? head_hidden : d_model; }

    /// Throws on inconsistent settings (divisibility, ranges).
    void validate() const;

    nlohmann::json to_json() const;
    /// Fields missing from `j` keep their current values.
    void merge_json(const nlohmann::json& j);
};

/// Parameter groups used for freezing: the embedding, each encoder layer, and
/// the head (class-token pooling plus the classifier MLP).
struct ParamGroup {
    enum Kind { embed, layer, head } kind = embed;
    std::size_t layer_index = 0;
};

/// Per-layer tensors as tape variables.
struct EncoderVars {
    Var w_q, w_k, w_v, w_o, w_1, b_1, w_2, b_2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct HeadVars {
    Var w_3, b_3, w_4, b_4;
};

struct BlockOptions {
    AttentionOptions attention;
    std::size_t tokens = 1;
    double dropout = 0.0;
    double ln_eps = 1e-6;
    bool training = false;
    std::uint64_t seed = 0;
};

/// Optional observations from one forward pass.
struct ForwardTrace {
    std::vector<Tensor> layer_outputs;         // per layer: [B*N_p x d_model]
    std::vector<AttentionTrace> attention;     // per layer
};

/// Spatial-spectral transformer classifier.
class SstModel {
public:
    SstModel(SstConfig config, std::uint64_t seed);

    const SstConfig& config() const { return config_; }

    std::span<Parameter> parameters() { return params_; }
    std::span<const Parameter> parameters() const { return params_; }
    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;
    ParamGroup group_of(std::size_t param_index) const { return groups_[param_index]; }

    void set_layer_frozen(std::size_t layer, bool frozen);
    void set_embed_frozen(bool frozen);
    void set_head_frozen(bool frozen);
    bool layer_frozen(std::size_t layer) const;
    bool embed_frozen() const;
    bool head_frozen() const;
    void unfreeze_all();

    /// Re-initializes the output layer (W_4, b_4) for a new class count.
    void reset_head(std::size_t classes, std::uint64_t seed);

    /// Class probabilities [B x C] for a batch of windows, recorded on `tape`.
    /// Parameters enter the tape as variables (or constants when frozen or
    /// `with_grad` is false); `bound` receives their handles in parameter order.
    Var forward(Tape& tape, std::span<const PatchWindow> windows, bool training, std::uint64_t seed, bool with_grad,
                std::vector<Var>* bound = nullptr, ForwardTrace* trace = nullptr) const;

    /// Evaluation-mode probabilities [B x C].
    Tensor predict(std::span<const PatchWindow> windows, ForwardTrace* trace = nullptr) const;

    Checkpoint to_checkpoint() const;
    static SstModel from_checkpoint(const Checkpoint& checkpoint);

private:
    SstModel() = default;
    void add_parameter(std::string name, Shape shape, ParamGroup group, double bound, Rng& rng);
    std::size_t index_of(std::string_view name) const;

    SstConfig config_;
    std::vector<Parameter> params_;
    std::vector<ParamGroup> groups_;
};

// --- building blocks, usable on their own -----------------------------------

/// Unfolds a window into N_p rows of p*p*k values; subpatches in row-major
/// order, features ordered (m, n, band).
Tensor unfold_window(const PatchWindow& window, std::size_t subpatch);

/// Patch embedding: each subpatch contracted against the kernel bank
/// [p*p*k x d] -> [N_p x d].
Tensor embed_patches(const PatchWindow& window, const Tensor& kernel, std::size_t subpatch);

/// Sinusoidal table; column 2j is sin(i / 10000^(2j/d)), column 2j+1 the cosine.
Tensor positional_encoding(std::size_t tokens, std::size_t d_model);

/// softmax(Q K^T / sqrt(d_k)) V, composed from generic tensor operations.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Single-head calibrated attention (see multi_head_attention).
Tensor calibrated_attention(const Tensor& q, const Tensor& k, const Tensor& v, double lambda, bool renormalize);

/// Mean over heads of normalized row entropy for [h x N x N] weights.
Tensor token_uncertainty(const Tensor& weights);

/// One encoder block on the tape.
Var encoder_block(Tape& tape, Var z, const EncoderVars& p, const BlockOptions& options,
                  AttentionTrace* trace = nullptr);

/// Learned-query pooling of a [N x d] sequence into [d].
Tensor cross_attention_pool(const Tensor& z, const Tensor& query, const Tensor& w_k, const Tensor& w_v);

/// softmax(relu(x W_3 + b_3) W_4 + b_4) for x of shape [d].
Tensor classify(const Tensor& pooled, const Tensor& w_3, const Tensor& b_3, const Tensor& w_4, const Tensor& b_4);

}  // namespace sstatl
