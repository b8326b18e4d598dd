#include "csformer/cnn_stem.hpp"

namespace csf {

ConvUnit ConvUnit::create(int channels, Rng& rng) {
    ConvUnit u;
    u.conv_w = fan_in_normal(rng, {channels, 3, 3, channels}, 9 * channels);
    u.conv_b = Tensor::zeros({channels}, true);
    u.bn_gamma = Tensor::full({channels}, 1.0, true);
    u.bn_beta = Tensor::zeros({channels}, true);
    u.bn.init(channels);
    return u;
}

ConvBlock ConvBlock::create(int channels, Rng& rng) {
    ConvBlock b;
    b.channels = channels;
    b.unit0 = ConvUnit::create(channels, rng);
    b.unit1 = ConvUnit::create(channels, rng);
    return b;
}

static Tensor conv_unit_forward(ConvUnit& u, const Tensor& f, Mode mode, double leaky_slope, double bn_momentum,
                                bool track_stats) {
    Tensor x = ops::conv2d(f, u.conv_w, 1, 1, u.conv_b);
    x = ops::leaky_relu(x, leaky_slope);
    return ops::batch_norm(x, u.bn_gamma, u.bn_beta, u.bn, mode, track_stats, bn_momentum);
}

Tensor conv_block_forward(ConvBlock& block, const Tensor& f, Mode mode, double leaky_slope, double bn_momentum,
                          bool track_stats) {
    if (f.dim(-1) != block.channels) {
        throw DimensionError("conv_block_forward: expected " + std::to_string(block.channels) + " channels, got " +
                             std::to_string(f.dim(-1)));
    }
    Tensor x = conv_unit_forward(block.unit0, f, mode, leaky_slope, bn_momentum, track_stats);
    x = conv_unit_forward(block.unit1, x, mode, leaky_slope, bn_momentum, track_stats);
    if (x.shape() != f.shape()) throw DimensionError("conv_block_forward: shape not preserved");
    return x;
}

UpsampleModule UpsampleModule::create(int in_channels, int out_channels, Rng& rng) {
    UpsampleModule m;
    m.conv_w = fan_in_normal(rng, {out_channels, 1, 1, in_channels}, in_channels);
    m.conv_b = Tensor::zeros({out_channels}, true);
    return m;
}

Tensor upsample_forward(const UpsampleModule& mod, const Tensor& f) {
    if (f.dim(-1) != mod.conv_w.dim(3)) {
        throw DimensionError("upsample_forward: expected " + std::to_string(mod.conv_w.dim(3)) + " channels, got " +
                             std::to_string(f.dim(-1)));
    }
    Tensor up = ops::bicubic_upsample(f, 2);
    return ops::conv2d(up, mod.conv_w, 1, 0, mod.conv_b);
}

CnnStem CnnStem::create(int c0, int stages, Rng& rng) {
    if (stages < 1) throw ConfigError("cnn stem needs at least one stage");
    if (c0 % (1 << (stages - 1)) != 0) {
        throw ConfigError("C0 = " + std::to_string(c0) + " not divisible through " + std::to_string(stages) +
                          " halving stages");
    }
    CnnStem stem;
    stem.c0 = c0;
    stem.stages = stages;
    stem.block0 = ConvBlock::create(c0, rng);
    int c = c0;
    for (int i = 1; i < stages; ++i) {
        stem.ups.push_back(UpsampleModule::create(c, c / 2, rng));
        c /= 2;
        stem.blocks.push_back(ConvBlock::create(c, rng));
    }
    return stem;
}

std::vector<Tensor> cnn_stem_forward(CnnStem& stem, const Tensor& f_in, Mode mode, double leaky_slope,
                                     double bn_momentum, bool track_stats) {
    const bool batched = f_in.rank() == 4;
    if (!batched && f_in.rank() != 3) throw DimensionError("cnn_stem_forward: input must be [H,W,C] or [N,H,W,C]");
    const int h0 = f_in.dim(batched ? 1 : 0);
    const int w0 = f_in.dim(batched ? 2 : 1);
    if (f_in.dim(-1) != stem.c0) {
        throw DimensionError("cnn_stem_forward: expected " + std::to_string(stem.c0) + " input channels");
    }

    std::vector<Tensor> pyramid;
    pyramid.reserve(static_cast<std::size_t>(stem.stages));
    Tensor f = conv_block_forward(stem.block0, f_in, mode, leaky_slope, bn_momentum, track_stats);
    pyramid.push_back(f);
    for (int i = 1; i < stem.stages; ++i) {
        f = upsample_forward(stem.ups[static_cast<std::size_t>(i - 1)], f);
        f = conv_block_forward(stem.blocks[static_cast<std::size_t>(i - 1)], f, mode, leaky_slope, bn_momentum,
                               track_stats);
        pyramid.push_back(f);
    }
    // schedule audit: H_i = 2^i H0, W_i = 2^i W0, C_i = C0 / 2^i
    for (int i = 0; i < stem.stages; ++i) {
        const Tensor& t = pyramid[static_cast<std::size_t>(i)];
        const int hh = t.dim(batched ? 1 : 0);
        const int ww = t.dim(batched ? 2 : 1);
        if (hh != (h0 << i) || ww != (w0 << i) || t.dim(-1) != stem.c0 >> i) {
            throw DimensionError("cnn stem stage " + std::to_string(i) + " violates the resolution/width schedule");
        }
    }
    return pyramid;
}

}  // namespace csf
