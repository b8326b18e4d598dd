#pragma once

#include <vector>

#include "csformer/ops.hpp"
#include "csformer/rng.hpp"
#include "csformer/tensor.hpp"

namespace csf {

enum class FusionMode { kConcat, kAdd };

// Window-local multi-head self-attention. Per head h the projections own
// the column block [h*d, (h+1)*d) of the fused [C,C] matrices, with
// d = C/heads; E is a learnable per-head table over relative offsets.
struct AttentionParams {
    int heads = 0;
    int window = 0;
    Tensor w_q, w_k, w_v, w_o;  // [C,C], no bias
    Tensor pos_bias;            // [heads, (2P-1)^2], zero-initialized

    static AttentionParams create(int channels, int heads, int window, Rng& rng);
};

// windows [B, P^2, C] (or a single [P^2, C] window):
// per head O = softmax(Q K^T / sqrt(d) + E) V, heads concatenated, then W_O.
Tensor window_msa(const AttentionParams& params, const Tensor& windows);

// Pre-norm transformer layer: F' = MSA(LN(F)) + F; out = MLP(LN(F')) + F'.
struct TransformerLayer {
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
    AttentionParams attn;
    Tensor mlp_w1, mlp_b1;  // [C, r*C], [r*C]
    Tensor mlp_w2, mlp_b2;  // [r*C, C], [C]

    static TransformerLayer create(int channels, int heads, int window, int mlp_ratio, Rng& rng);
};

// tokens [N, H*W, C]; attention runs inside PxP windows.
Tensor transformer_layer_forward(const TransformerLayer& layer, const Tensor& tokens, int height, int width);

struct TransformerBlock {
    int channels = 0;
    std::vector<TransformerLayer> layers;

    static TransformerBlock create(int channels, int heads, int window, int depth, int mlp_ratio, Rng& rng);
};

Tensor transformer_block_forward(const TransformerBlock& block, Tensor tokens, int height, int width);

// First-stage aggregation: concat(F_in, F_c^0) over channels (or add), then
// flatten to tokens. Both inputs are [N,H0,W0,C0] feature maps.
Tensor aggregate_first(const Tensor& f_in, const Tensor& f_c0, FusionMode fusion);

// Later stages: reshape tokens to 2-D, pixel_shuffle(2) (x2 resolution,
// quarter channels), then fuse with the next CNN feature and flatten.
// `align` is the add-mode 1x1 conv that restores the fused width; undefined
// in concat mode.
Tensor aggregate_next(const Tensor& tokens_prev, int height, int width, const Tensor& f_c_next, FusionMode fusion,
                      const Tensor& align_w, const Tensor& align_b);

// The full global branch: per stage aggregate with the CNN pyramid, run the
// windowed transformer block, and hand tokens to the next stage.
struct TransformerStem {
    int window = 0;
    FusionMode fusion = FusionMode::kConcat;
    std::vector<TransformerBlock> blocks;
    std::vector<Tensor> align_w, align_b;  // add mode only, one per stage >= 1

    // widths[j] is the token width C_j of stage j; heads[j] likewise.
    static TransformerStem create(const std::vector<int>& widths, const std::vector<int>& heads, int window, int depth,
                                  int mlp_ratio, FusionMode fusion, Rng& rng);
};

// f_in [N,H0,W0,C]; pyramid from the CNN stem. Returns the final stage
// tokens [N, H_p*W_p, C_last].
Tensor transformer_stem_forward(const TransformerStem& stem, const Tensor& f_in, const std::vector<Tensor>& pyramid);

}  // namespace csf
