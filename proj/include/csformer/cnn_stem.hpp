#pragma once

#include <vector>

#include "csformer/ops.hpp"
#include "csformer/rng.hpp"
#include "csformer/tensor.hpp"

namespace csf {

// One conv unit: 3x3 conv (padding 1, channel-preserving) -> leaky ReLU ->
// batch norm. A ConvBlock applies two of them.
struct ConvUnit {
    Tensor conv_w, conv_b;    // [C,3,3,C], [C]
    Tensor bn_gamma, bn_beta;  // [C]
    ops::BatchNormState bn;

    static ConvUnit create(int channels, Rng& rng);
};

struct ConvBlock {
    int channels = 0;
    ConvUnit unit0, unit1;

    static ConvBlock create(int channels, Rng& rng);
};

Tensor conv_block_forward(ConvBlock& block, const Tensor& f, Mode mode, double leaky_slope, double bn_momentum = 0.1,
                          bool track_stats = true);

// bicubic x2 followed by a 1x1 convolution that halves (or remaps) the
// channel count.
struct UpsampleModule {
    Tensor conv_w, conv_b;  // [Cout,1,1,Cin]

    static UpsampleModule create(int in_channels, int out_channels, Rng& rng);
};

Tensor upsample_forward(const UpsampleModule& mod, const Tensor& f);

// Four (by default) stages on the schedule H_i = 2^i * H0, C_i = C0 / 2^i.
struct CnnStem {
    int c0 = 0;
    int stages = 0;
    ConvBlock block0;
    std::vector<UpsampleModule> ups;     // stages-1 entries
    std::vector<ConvBlock> blocks;       // stages-1 entries

    static CnnStem create(int c0, int stages, Rng& rng);
};

// Returns the pyramid [F_c^0 .. F_c^{stages-1}]; every stage shape is
// checked against the schedule.
std::vector<Tensor> cnn_stem_forward(CnnStem& stem, const Tensor& f_in, Mode mode, double leaky_slope,
                                     double bn_momentum = 0.1, bool track_stats = true);

}  // namespace csf
