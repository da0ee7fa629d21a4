#pragma once

#include <cstddef>
#include <vector>

#include "sstatl/tape.hpp"

namespace sstatl {

struct AttentionOptions {
    std::size_t heads = 1;
    double lambda = 0.0;       // calibration strength, >= 0
    bool renormalize = false;  // re-divide calibrated rows by their sums
};

/// Attention weights observed during a forward pass, for inspection.
struct AttentionTrace {
    std::vector<Tensor> weights;      // per sequence: [heads x Nq x Nk], before calibration
    std::vector<Tensor> uncertainty;  // per sequence: [Nq]
};

/// Batched multi-head attention with uncertainty calibration.
///
/// q is [G*Nq x dq], k is [G*Nk x dq], v is [G*Nk x dv]: G independent
/// sequences stacked by rows. Head h uses columns [h*dq/H, (h+1)*dq/H) of q and
/// k and the matching slice of v; head outputs are concatenated in the same
/// column layout. Per head, A = softmax(q k^T / sqrt(dq/H)). The token
/// uncertainty U_i is the entropy of attention row i normalized by ln Nk and
/// averaged over heads; every head's row i is scaled by 1 + lambda * U_i
/// (then re-divided by its sum if `renormalize`) before multiplying v.
/// Gradients flow through U as well.
Var multi_head_attention(Tape& tape, Var q, Var k, Var v, std::size_t q_tokens, std::size_t k_tokens,
                         const AttentionOptions& options, AttentionTrace* trace = nullptr);

/// Pools each of G sequences of `tokens` rows with one shared query vector:
/// out_g = softmax(query . k_g^T / sqrt(d)) v_g. query is [d], k is [G*N x d],
/// v is [G*N x dv]; the result is [G x dv].
Var query_pool(Tape& tape, Var query, Var k, Var v, std::size_t tokens);

}  // namespace sstatl
