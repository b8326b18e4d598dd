#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csformer/cnn_stem.hpp"
#include "csformer/projections.hpp"
#include "csformer/sampling.hpp"
#include "csformer/transformer.hpp"

namespace csf {

enum class LossTarget { kImage, kPatch };

std::string to_string(FusionMode m);
std::string to_string(LossTarget t);
FusionMode fusion_from_string(const std::string& s);
LossTarget loss_target_from_string(const std::string& s);

// Every architectural knob. The resolution/width schedules are all derived
// from (patch_size, block, c0, stages); validate() enforces the coupling
// H0 = 2*(H_p/B) and H_p = H0 * 2^(stages-1).
struct ModelConfig {
    int patch_size = 64;  // H_p = W_p
    int block = 16;       // B
    double ratio = 0.1;   // m / B^2
    int c0 = 128;
    int h0 = 8;  // = 2 * (patch_size / block)
    int window = 8;
    int depth = 5;  // transformer layers per block (L)
    int stages = 4;
    int head_dim = 32;  // heads_j = max(1, C_j / head_dim)
    int mlp_ratio = 4;
    double leaky_slope = 0.2;
    double bn_momentum = 0.1;
    FusionMode fusion = FusionMode::kConcat;
    LossTarget loss_target = LossTarget::kImage;
    int input_proj_layers = 2;
    int eval_overlap_stride = 32;

    int measurements() const { return derive_m(ratio, block); }
    int grid_extent() const { return patch_size / block; }
    // token width of transformer stage j: 2*C0 / 2^j
    std::vector<int> transformer_widths() const;
    // CNN stage widths; doubled in add-fusion mode so the transformer keeps
    // its concat-mode widths
    std::vector<int> cnn_widths() const;
    std::vector<int> heads() const;
    int projected_channels() const;  // channels of F_in
    int final_width() const;         // channels entering the output projection

    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

class CsformerModel {
public:
    struct Param {
        std::string name;
        Tensor tensor;
    };
    struct Buffer {
        std::string name;
        std::vector<double>* data;
    };
    struct PatchForward {
        Tensor measurement;  // [N, g, g, m]
        Tensor initial;      // [N, Hp, Wp, 1]
        Tensor residual;     // [N, Hp, Wp, 1]
        Tensor output;       // initial + residual (un-clamped)
    };

    static CsformerModel create(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    PatchForward forward_patches(const Tensor& patches, Mode mode, bool track_stats = true);

    // Parameter/buffer registries walk the structure in a fixed order; the
    // order defines the checkpoint layout.
    std::vector<Param> parameters() const;
    std::vector<Buffer> buffers();
    std::int64_t parameter_count() const;
    void zero_grad() const;

    SamplingOperator& sampling() { return sampling_; }
    InitializationHead& init_head() { return init_head_; }
    CnnStem& cnn() { return cnn_; }
    TransformerStem& transformer() { return tstem_; }
    OutputProjection& output_projection() { return out_proj_; }

private:
    ModelConfig cfg_;
    SamplingOperator sampling_;
    InitializationHead init_head_;
    InputProjection input_proj_;
    CnnStem cnn_;
    TransformerStem tstem_;
    OutputProjection out_proj_;
};

}  // namespace csf
