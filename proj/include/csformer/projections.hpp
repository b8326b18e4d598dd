#pragma once

#include <vector>

#include "csformer/ops.hpp"
#include "csformer/rng.hpp"
#include "csformer/tensor.hpp"

namespace csf {

// Learned stand-in for the pseudo-inverse: B^2 filters of 1x1xm followed by
// pixel_shuffle(B). No bias, so the map stays linear in the measurements.
struct InitializationHead {
    int block = 0;
    Tensor kernels;  // [B^2, 1, 1, m]

    static InitializationHead create(int block, int measurements, Rng& rng);
};

Tensor init_reconstruct(const InitializationHead& head, const Tensor& grid);

// Stack of 1x1 convolutions (no bias, hence linear) ending in 4*C channels,
// followed by pixel_shuffle(2) to reach [2*(H_p/B)]^2 x C.
struct InputProjection {
    std::vector<Tensor> weights;  // each [Cout, 1, 1, Cin]

    static InputProjection create(int measurements, int out_channels, int num_layers, Rng& rng);
};

Tensor input_project(const InputProjection& proj, const Tensor& grid);

// Two 3x3 convolutions then tanh: the residual patch in (-1, 1).
struct OutputProjection {
    Tensor conv1_w, conv1_b;  // [C,3,3,C], [C]
    Tensor conv2_w, conv2_b;  // [1,3,3,C], [1]

    static OutputProjection create(int channels, Rng& rng);
};

Tensor output_project(const OutputProjection& proj, const Tensor& feature);

}  // namespace csf
