#pragma once

#include "csformer/ops.hpp"
#include "csformer/rng.hpp"
#include "csformer/tensor.hpp"

namespace csf {

// m = round(ratio * B^2), clamped to [1, B^2]. ratio must lie in (0, 1].
int derive_m(double ratio, int block);

// Learned block sampling kernels W_B: m filters of BxBx1, no bias, applied
// with stride B. Equivalent to the classical per-block y = Phi * vec(x).
struct SamplingOperator {
    int block = 0;
    int measurements = 0;
    double ratio = 0.0;
    Tensor kernels;  // [m, B, B, 1]

    // Rows start mutually orthogonal with norm 1/B.
    static SamplingOperator create(double ratio, int block, Rng& rng);

    // Kernels taken from an explicit measurement matrix [m, B^2].
    static SamplingOperator from_matrix(const Tensor& phi, int block, double ratio);
};

// patch [H,W,1] or [N,H,W,1] with extents divisible by B -> measurement
// grid [H/B, W/B, m] (batched alike).
Tensor sample_patch(const SamplingOperator& op, const Tensor& patch);

// Row r is kernel r flattened in row-major block order: [m, B^2].
Tensor phi_as_matrix(const SamplingOperator& op);

// Classical block-based sampling, written with plain loops: every BxB block
// is vectorized, multiplied by phi, and the results are stacked on the
// measurement grid. This is the reference path sample_patch must match.
Tensor sample_blockwise_reference(const Tensor& patch, const Tensor& phi, int block);

}  // namespace csf
