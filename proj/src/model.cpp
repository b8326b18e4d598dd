#include "csformer/model.hpp"

#include <algorithm>
#include <cstdio>

namespace csf {

std::string to_string(FusionMode m) { return m == FusionMode::kConcat ? "concat" : "add"; }
std::string to_string(LossTarget t) { return t == LossTarget::kImage ? "image" : "patch"; }

FusionMode fusion_from_string(const std::string& s) {
    if (s == "concat") return FusionMode::kConcat;
    if (s == "add") return FusionMode::kAdd;
    throw ConfigError("unknown fusion_mode '" + s + "' (expected concat or add)");
}

LossTarget loss_target_from_string(const std::string& s) {
    if (s == "image") return LossTarget::kImage;
    if (s == "patch") return LossTarget::kPatch;
    throw ConfigError("unknown loss_target '" + s + "' (expected image or patch)");
}

std::vector<int> ModelConfig::transformer_widths() const {
    std::vector<int> w;
    for (int j = 0; j < stages; ++j) w.push_back((2 * c0) >> j);
    return w;
}

std::vector<int> ModelConfig::cnn_widths() const {
    const int base = fusion == FusionMode::kAdd ? 2 * c0 : c0;
    std::vector<int> w;
    for (int i = 0; i < stages; ++i) w.push_back(base >> i);
    return w;
}

std::vector<int> ModelConfig::heads() const {
    std::vector<int> h;
    for (int c : transformer_widths()) h.push_back(std::max(1, c / head_dim));
    return h;
}

int ModelConfig::projected_channels() const { return fusion == FusionMode::kAdd ? 2 * c0 : c0; }

int ModelConfig::final_width() const { return transformer_widths().back(); }

void ModelConfig::validate() const {
    if (patch_size < 1 || block < 1) throw ConfigError("patch and block sizes must be positive");
    if (patch_size % block != 0) throw ConfigError("H_p must be divisible by B");
    if (h0 != 2 * (patch_size / block)) {
        throw ConfigError("H0 must equal 2*(H_p/B): got H0 = " + std::to_string(h0) + " for H_p = " +
                          std::to_string(patch_size) + ", B = " + std::to_string(block));
    }
    if (stages < 1) throw ConfigError("stages must be >= 1");
    if (patch_size != h0 * (1 << (stages - 1))) {
        throw ConfigError("H_p must equal H0 * 2^(stages-1); got H_p = " + std::to_string(patch_size) + ", H0 = " +
                          std::to_string(h0) + ", stages = " + std::to_string(stages));
    }
    if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("ratio must lie in (0,1]");
    if (c0 < 1 || c0 % (1 << (stages - 1)) != 0) throw ConfigError("C0 must survive stages-1 halvings");
    if ((2 * c0) % (1 << (stages - 1)) != 0) throw ConfigError("2*C0 must survive stages-1 halvings");
    for (int j = 0; j < stages; ++j) {
        const int hj = h0 << j;
        if (hj % window != 0) {
            throw ConfigError("stage " + std::to_string(j) + " resolution " + std::to_string(hj) +
                              " is not divisible by the window size " + std::to_string(window));
        }
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(stages); ++j) {
        const int c = transformer_widths()[j];
        const int h = heads()[j];
        if (c % h != 0) throw ConfigError("stage width " + std::to_string(c) + " not divisible by heads");
        if (c % 4 != 0 && j + 1 < static_cast<std::size_t>(stages)) {
            throw ConfigError("stage width must be divisible by 4 for the pixel-shuffle hand-off");
        }
    }
    if (depth < 1) throw ConfigError("L must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (input_proj_layers < 1) throw ConfigError("input_proj_layers must be >= 1");
    if (eval_overlap_stride < 1 || eval_overlap_stride > patch_size) {
        throw ConfigError("eval_overlap_stride must lie in [1, H_p]");
    }
    if (!(leaky_slope >= 0.0) || leaky_slope >= 1.0) throw ConfigError("leaky_slope must lie in [0,1)");
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ConfigError("bad numeric value for " + key + ": '" + s + "'");
    return v;
}

int parse_int(const std::string& s, const std::string& key) {
    const double v = parse_double(s, key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) throw ConfigError("expected an integer for " + key + ", got '" + s + "'");
    return i;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["H_p"] = std::to_string(patch_size);
    kv["B"] = std::to_string(block);
    kv["ratio"] = fmt_double(ratio);
    kv["C0"] = std::to_string(c0);
    kv["H0"] = std::to_string(h0);
    kv["P"] = std::to_string(window);
    kv["L"] = std::to_string(depth);
    kv["stages"] = std::to_string(stages);
    kv["head_dim"] = std::to_string(head_dim);
    kv["mlp_ratio"] = std::to_string(mlp_ratio);
    kv["leaky_slope"] = fmt_double(leaky_slope);
    kv["bn_momentum"] = fmt_double(bn_momentum);
    kv["fusion_mode"] = to_string(fusion);
    kv["loss_target"] = to_string(loss_target);
    kv["input_proj_layers"] = std::to_string(input_proj_layers);
    kv["eval_overlap_stride"] = std::to_string(eval_overlap_stride);
    return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    bool h0_given = false;
    for (const auto& [key, value] : kv) {
        if (key == "H_p") {
            cfg.patch_size = parse_int(value, key);
        } else if (key == "B") {
            cfg.block = parse_int(value, key);
        } else if (key == "ratio") {
            cfg.ratio = parse_double(value, key);
        } else if (key == "C0") {
            cfg.c0 = parse_int(value, key);
        } else if (key == "H0") {
            cfg.h0 = parse_int(value, key);
            h0_given = true;
        } else if (key == "P") {
            cfg.window = parse_int(value, key);
        } else if (key == "L") {
            cfg.depth = parse_int(value, key);
        } else if (key == "stages") {
            cfg.stages = parse_int(value, key);
        } else if (key == "head_dim") {
            cfg.head_dim = parse_int(value, key);
        } else if (key == "mlp_ratio") {
            cfg.mlp_ratio = parse_int(value, key);
        } else if (key == "leaky_slope") {
            cfg.leaky_slope = parse_double(value, key);
        } else if (key == "bn_momentum") {
            cfg.bn_momentum = parse_double(value, key);
        } else if (key == "fusion_mode") {
            cfg.fusion = fusion_from_string(value);
        } else if (key == "loss_target") {
            cfg.loss_target = loss_target_from_string(value);
        } else if (key == "input_proj_layers") {
            cfg.input_proj_layers = parse_int(value, key);
        } else if (key == "eval_overlap_stride") {
            cfg.eval_overlap_stride = parse_int(value, key);
        } else {
            throw ConfigError("unknown model config key '" + key + "'");
        }
    }
    if (!h0_given) cfg.h0 = 2 * (cfg.patch_size / std::max(1, cfg.block));
    cfg.validate();
    return cfg;
}

CsformerModel CsformerModel::create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CsformerModel m;
    m.cfg_ = cfg;
    Rng rng(seed);
    const int meas = cfg.measurements();
    m.sampling_ = SamplingOperator::create(cfg.ratio, cfg.block, rng);
    m.init_head_ = InitializationHead::create(cfg.block, meas, rng);
    m.input_proj_ = InputProjection::create(meas, cfg.projected_channels(), cfg.input_proj_layers, rng);
    m.cnn_ = CnnStem::create(cfg.cnn_widths().front(), cfg.stages, rng);
    m.tstem_ = TransformerStem::create(cfg.transformer_widths(), cfg.heads(), cfg.window, cfg.depth, cfg.mlp_ratio,
                                       cfg.fusion, rng);
    m.out_proj_ = OutputProjection::create(cfg.final_width(), rng);
    return m;
}

namespace {

template <typename F>
Tensor run_stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " [stage: " + name + "]");
    }
}

}  // namespace

CsformerModel::PatchForward CsformerModel::forward_patches(const Tensor& patches, Mode mode, bool track_stats) {
    if (patches.rank() != 4 || patches.dim(3) != 1 || patches.dim(1) != cfg_.patch_size ||
        patches.dim(2) != cfg_.patch_size) {
        throw DimensionError("forward_patches: expected [N," + std::to_string(cfg_.patch_size) + "," +
                             std::to_string(cfg_.patch_size) + ",1], got " + dims_to_string(patches.shape()));
    }
    const int n = patches.dim(0);
    const int g = cfg_.grid_extent();

    PatchForward out;
    out.measurement = run_stage("sampling", [&] { return sample_patch(sampling_, patches); });
    if (out.measurement.shape() != Dims{n, g, g, cfg_.measurements()}) {
        throw DimensionError("sampling produced an off-schedule measurement grid");
    }
    out.initial = run_stage("initialization", [&] { return init_reconstruct(init_head_, out.measurement); });
    if (out.initial.shape() != patches.shape()) throw DimensionError("initialization shape mismatch");

    Tensor f_in = run_stage("input projection", [&] { return input_project(input_proj_, out.measurement); });
    if (f_in.shape() != Dims{n, cfg_.h0, cfg_.h0, cfg_.projected_channels()}) {
        throw DimensionError("input projection violated the H0/C0 contract");
    }

    std::vector<Tensor> pyramid;
    {
        try {
            pyramid = cnn_stem_forward(cnn_, f_in, mode, cfg_.leaky_slope, cfg_.bn_momentum, track_stats);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " [stage: cnn stem]");
        }
    }

    Tensor tokens = run_stage("transformer stem", [&] { return transformer_stem_forward(tstem_, f_in, pyramid); });
    if (tokens.shape() != Dims{n, cfg_.patch_size * cfg_.patch_size, cfg_.final_width()}) {
        throw DimensionError("transformer stem left tokens off schedule");
    }

    Tensor grid2d = ops::reshape(tokens, {n, cfg_.patch_size, cfg_.patch_size, cfg_.final_width()});
    out.residual = run_stage("output projection", [&] { return output_project(out_proj_, grid2d); });
    if (out.residual.shape() != patches.shape()) throw DimensionError("output projection shape mismatch");

    out.output = run_stage("residual sum", [&] { return ops::add(out.initial, out.residual); });
    return out;
}

std::vector<CsformerModel::Param> CsformerModel::parameters() const {
    std::vector<Param> ps;
    auto push = [&ps](const std::string& name, const Tensor& t) { ps.push_back({name, t}); };

    push("sampling.kernels", sampling_.kernels);
    push("init.kernels", init_head_.kernels);
    for (std::size_t i = 0; i < input_proj_.weights.size(); ++i) {
        push("input_proj." + std::to_string(i) + ".weight", input_proj_.weights[i]);
    }
    auto push_block = [&push](const std::string& prefix, const ConvBlock& b) {
        const ConvUnit* units[2] = {&b.unit0, &b.unit1};
        for (int u = 0; u < 2; ++u) {
            const std::string base = prefix + ".unit" + std::to_string(u);
            push(base + ".conv.weight", units[u]->conv_w);
            push(base + ".conv.bias", units[u]->conv_b);
            push(base + ".bn.weight", units[u]->bn_gamma);
            push(base + ".bn.bias", units[u]->bn_beta);
        }
    };
    push_block("cnn.block0", cnn_.block0);
    for (std::size_t i = 0; i < cnn_.ups.size(); ++i) {
        push("cnn.up" + std::to_string(i + 1) + ".conv.weight", cnn_.ups[i].conv_w);
        push("cnn.up" + std::to_string(i + 1) + ".conv.bias", cnn_.ups[i].conv_b);
        push_block("cnn.block" + std::to_string(i + 1), cnn_.blocks[i]);
    }
    for (std::size_t j = 0; j < tstem_.blocks.size(); ++j) {
        for (std::size_t l = 0; l < tstem_.blocks[j].layers.size(); ++l) {
            const TransformerLayer& layer = tstem_.blocks[j].layers[l];
            const std::string base = "transformer.block" + std::to_string(j) + ".layer" + std::to_string(l);
            push(base + ".ln1.weight", layer.ln1_gamma);
            push(base + ".ln1.bias", layer.ln1_beta);
            push(base + ".attn.wq", layer.attn.w_q);
            push(base + ".attn.wk", layer.attn.w_k);
            push(base + ".attn.wv", layer.attn.w_v);
            push(base + ".attn.wo", layer.attn.w_o);
            push(base + ".attn.pos_bias", layer.attn.pos_bias);
            push(base + ".ln2.weight", layer.ln2_gamma);
            push(base + ".ln2.bias", layer.ln2_beta);
            push(base + ".mlp.fc1.weight", layer.mlp_w1);
            push(base + ".mlp.fc1.bias", layer.mlp_b1);
            push(base + ".mlp.fc2.weight", layer.mlp_w2);
            push(base + ".mlp.fc2.bias", layer.mlp_b2);
        }
    }
    for (std::size_t j = 0; j < tstem_.align_w.size(); ++j) {
        push("transformer.align" + std::to_string(j + 1) + ".weight", tstem_.align_w[j]);
        push("transformer.align" + std::to_string(j + 1) + ".bias", tstem_.align_b[j]);
    }
    push("output_proj.conv1.weight", out_proj_.conv1_w);
    push("output_proj.conv1.bias", out_proj_.conv1_b);
    push("output_proj.conv2.weight", out_proj_.conv2_w);
    push("output_proj.conv2.bias", out_proj_.conv2_b);
    return ps;
}

std::vector<CsformerModel::Buffer> CsformerModel::buffers() {
    std::vector<Buffer> bs;
    auto push_unit = [&bs](const std::string& base, ConvUnit& u) {
        bs.push_back({base + ".bn.running_mean", &u.bn.running_mean});
        bs.push_back({base + ".bn.running_var", &u.bn.running_var});
    };
    push_unit("cnn.block0.unit0", cnn_.block0.unit0);
    push_unit("cnn.block0.unit1", cnn_.block0.unit1);
    for (std::size_t i = 0; i < cnn_.blocks.size(); ++i) {
        push_unit("cnn.block" + std::to_string(i + 1) + ".unit0", cnn_.blocks[i].unit0);
        push_unit("cnn.block" + std::to_string(i + 1) + ".unit1", cnn_.blocks[i].unit1);
    }
    return bs;
}

std::int64_t CsformerModel::parameter_count() const {
    std::int64_t total = 0;
    for (const Param& p : parameters()) total += p.tensor.numel();
    return total;
}

void CsformerModel::zero_grad() const {
    for (const Param& p : parameters()) p.tensor.zero_grad();
}

}  // namespace csf
