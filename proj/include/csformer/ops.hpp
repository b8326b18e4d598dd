#pragma once

#include <utility>
#include <vector>

#include "csformer/autodiff.hpp"
#include "csformer/tensor.hpp"

namespace csf {

enum class Mode { kTrain, kEval };

namespace ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// bias has shape [C] and is broadcast over the last axis of x
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Dims new_shape);

// ---- activations ----
Tensor leaky_relu(const Tensor& x, double negative_slope);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// ---- normalization ----
// Normalizes over the last axis of x (one group per leading index).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Running statistics owned by the enclosing module; persisted as buffers.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    void init(int channels) {
        running_mean.assign(static_cast<std::size_t>(channels), 0.0);
        running_var.assign(static_cast<std::size_t>(channels), 1.0);
    }
};

// x is [N,H,W,C] or [H,W,C]; statistics per channel over batch x spatial.
// Training mode normalizes with batch statistics (and updates the running
// ones when track_stats), eval mode always uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  bool track_stats = true, double momentum = 0.1, double eps = 1e-5);

// ---- linear algebra ----
// a [...,n,k] x b [...,k,p] -> [...,n,p]. Leading extents must match
// exactly, or b may be rank-2 (shared right factor).
Tensor matmul(const Tensor& a, const Tensor& b);

// input [N,H,W,Cin] or [H,W,Cin]; kernels [Cout,kh,kw,Cin]; cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding, const Tensor& bias = Tensor());

// [...,H,W,C*r^2] -> [...,H*r,W*r,C] and its inverse rearrangement.
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

// Cubic kernel a = -0.75, half-pixel centers, edge-clamped taps.
Tensor bicubic_upsample(const Tensor& x, int scale);

// ---- windowed attention building blocks (token layout) ----
// x [N, H*W, C] -> [N*numWindows, P*P, C]; window w holds one PxP tile in
// row-major token order. window_merge is the exact inverse.
Tensor window_partition(const Tensor& x, int height, int width, int window);
Tensor window_merge(const Tensor& windows, int height, int width, int window);

// q,k,v carry all heads fused along the channel axis (head h owns columns
// [h*d, (h+1)*d) with d = C/heads).
//   attn_scores:  [B,T,C] x [B,T,C] -> [B,heads,T,T], scaled by `scale`
//   attn_context: [B,heads,T,T] x [B,T,C] -> [B,T,C]
Tensor attn_scores(const Tensor& q, const Tensor& k, int heads, double scale);
Tensor attn_context(const Tensor& probs, const Tensor& v, int heads);

// scores [B,heads,T,T] with T == window^2; table [heads,(2*window-1)^2]
// indexed by relative (row, col) offset between the two tokens.
Tensor add_relative_bias(const Tensor& scores, const Tensor& table, int window);

// ---- patch assembly ----
// patches [Np,Hp,Wp,1] scattered onto [Nimg,H,W,1] at the given per-patch
// (image,row,col) anchors; anchors must tile each image exactly once.
struct PatchAnchor {
    int image;
    int row;
    int col;
};
Tensor mosaic_patches(const Tensor& patches, const std::vector<PatchAnchor>& anchors, int images, int out_h,
                      int out_w);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean_squared_error(const Tensor& a, const Tensor& b);

}  // namespace ops
}  // namespace csf
