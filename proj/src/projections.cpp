#include "csformer/projections.hpp"

namespace csf {

InitializationHead InitializationHead::create(int block, int measurements, Rng& rng) {
    InitializationHead head;
    head.block = block;
    head.kernels = fan_in_normal(rng, {block * block, 1, 1, measurements}, measurements);
    return head;
}

Tensor init_reconstruct(const InitializationHead& head, const Tensor& grid) {
    if (grid.dim(-1) != head.kernels.dim(3)) {
        throw DimensionError("init_reconstruct: grid has " + std::to_string(grid.dim(-1)) +
                             " channels but the head expects " + std::to_string(head.kernels.dim(3)));
    }
    Tensor lifted = ops::conv2d(grid, head.kernels, 1, 0);
    return ops::pixel_shuffle(lifted, head.block);
}

InputProjection InputProjection::create(int measurements, int out_channels, int num_layers, Rng& rng) {
    if (num_layers < 1) throw ConfigError("input projection needs at least one layer");
    InputProjection proj;
    const int wide = 4 * out_channels;  // pixel_shuffle(2) divides by 4
    int in = measurements;
    for (int i = 0; i < num_layers; ++i) {
        proj.weights.push_back(fan_in_normal(rng, {wide, 1, 1, in}, in));
        in = wide;
    }
    return proj;
}

Tensor input_project(const InputProjection& proj, const Tensor& grid) {
    if (grid.dim(-1) != proj.weights.front().dim(3)) {
        throw DimensionError("input_project: grid has " + std::to_string(grid.dim(-1)) +
                             " channels but the projection expects " + std::to_string(proj.weights.front().dim(3)));
    }
    Tensor x = grid;
    for (const Tensor& w : proj.weights) x = ops::conv2d(x, w, 1, 0);
    return ops::pixel_shuffle(x, 2);
}

OutputProjection OutputProjection::create(int channels, Rng& rng) {
    OutputProjection proj;
    proj.conv1_w = fan_in_normal(rng, {channels, 3, 3, channels}, 9 * channels);
    proj.conv1_b = Tensor::zeros({channels}, true);
    proj.conv2_w = fan_in_normal(rng, {1, 3, 3, channels}, 9 * channels);
    proj.conv2_b = Tensor::zeros({1}, true);
    return proj;
}

Tensor output_project(const OutputProjection& proj, const Tensor& feature) {
    Tensor x = ops::conv2d(feature, proj.conv1_w, 1, 1, proj.conv1_b);
    x = ops::conv2d(x, proj.conv2_w, 1, 1, proj.conv2_b);
    return ops::tanh(x);
}

}  // namespace csf
