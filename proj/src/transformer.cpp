#include "csformer/transformer.hpp"

#include <cmath>

namespace csf {

AttentionParams AttentionParams::create(int channels, int heads, int window, Rng& rng) {
    if (heads < 1 || channels % heads != 0) {
        throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible by " +
                          std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.heads = heads;
    p.window = window;
    p.w_q = fan_in_normal(rng, {channels, channels}, channels);
    p.w_k = fan_in_normal(rng, {channels, channels}, channels);
    p.w_v = fan_in_normal(rng, {channels, channels}, channels);
    p.w_o = fan_in_normal(rng, {channels, channels}, channels);
    const int span = 2 * window - 1;
    p.pos_bias = Tensor::zeros({heads, span * span}, true);
    return p;
}

Tensor window_msa(const AttentionParams& params, const Tensor& windows) {
    Tensor f = windows;
    const bool single = windows.rank() == 2;
    if (single) f = ops::reshape(windows, {1, windows.dim(0), windows.dim(1)});
    if (f.rank() != 3) throw DimensionError("window_msa: expected [B,P^2,C] windows");
    if (f.dim(1) != params.window * params.window) {
        throw DimensionError("window_msa: window holds " + std::to_string(f.dim(1)) + " tokens, expected " +
                             std::to_string(params.window * params.window));
    }
    const int c = f.dim(2);
    if (c != params.w_q.dim(0)) {
        throw DimensionError("window_msa: " + std::to_string(c) + " channels do not match the projections");
    }
    const int d = c / params.heads;
    Tensor q = ops::matmul(f, params.w_q);
    Tensor k = ops::matmul(f, params.w_k);
    Tensor v = ops::matmul(f, params.w_v);
    Tensor s = ops::attn_scores(q, k, params.heads, 1.0 / std::sqrt(static_cast<double>(d)));
    s = ops::add_relative_bias(s, params.pos_bias, params.window);
    Tensor probs = ops::softmax(s, -1);
    Tensor ctx = ops::attn_context(probs, v, params.heads);
    Tensor out = ops::matmul(ctx, params.w_o);
    if (single) out = ops::reshape(out, {windows.dim(0), windows.dim(1)});
    return out;
}

TransformerLayer TransformerLayer::create(int channels, int heads, int window, int mlp_ratio, Rng& rng) {
    TransformerLayer l;
    l.ln1_gamma = Tensor::full({channels}, 1.0, true);
    l.ln1_beta = Tensor::zeros({channels}, true);
    l.attn = AttentionParams::create(channels, heads, window, rng);
    l.ln2_gamma = Tensor::full({channels}, 1.0, true);
    l.ln2_beta = Tensor::zeros({channels}, true);
    const int hidden = mlp_ratio * channels;
    l.mlp_w1 = fan_in_normal(rng, {channels, hidden}, channels);
    l.mlp_b1 = Tensor::zeros({hidden}, true);
    l.mlp_w2 = fan_in_normal(rng, {hidden, channels}, hidden);
    l.mlp_b2 = Tensor::zeros({channels}, true);
    return l;
}

Tensor transformer_layer_forward(const TransformerLayer& layer, const Tensor& tokens, int height, int width) {
    if (tokens.rank() != 3) throw DimensionError("transformer_layer_forward: tokens must be [N,T,C]");
    const int p = layer.attn.window;
    Tensor normed = ops::layer_norm(tokens, layer.ln1_gamma, layer.ln1_beta);
    Tensor win = ops::window_partition(normed, height, width, p);
    Tensor msa = window_msa(layer.attn, win);
    Tensor merged = ops::window_merge(msa, height, width, p);
    Tensor x = ops::add(merged, tokens);

    Tensor normed2 = ops::layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    Tensor h = ops::add_channel_bias(ops::matmul(normed2, layer.mlp_w1), layer.mlp_b1);
    h = ops::gelu(h);
    h = ops::add_channel_bias(ops::matmul(h, layer.mlp_w2), layer.mlp_b2);
    return ops::add(h, x);
}

TransformerBlock TransformerBlock::create(int channels, int heads, int window, int depth, int mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.channels = channels;
    for (int i = 0; i < depth; ++i) b.layers.push_back(TransformerLayer::create(channels, heads, window, mlp_ratio, rng));
    return b;
}

Tensor transformer_block_forward(const TransformerBlock& block, Tensor tokens, int height, int width) {
    if (tokens.dim(-1) != block.channels) {
        throw DimensionError("transformer_block_forward: expected width " + std::to_string(block.channels));
    }
    for (const TransformerLayer& layer : block.layers) {
        tokens = transformer_layer_forward(layer, tokens, height, width);
    }
    return tokens;
}

namespace {

Tensor flatten_tokens(const Tensor& feature) {
    // [N,H,W,C] -> [N,H*W,C]; token t = row*W + col
    if (feature.rank() != 4) throw DimensionError("flatten_tokens: expected [N,H,W,C]");
    return ops::reshape(feature, {feature.dim(0), feature.dim(1) * feature.dim(2), feature.dim(3)});
}

}  // namespace

Tensor aggregate_first(const Tensor& f_in, const Tensor& f_c0, FusionMode fusion) {
    if (f_in.shape() != f_c0.shape()) {
        throw DimensionError("aggregate_first: shapes differ, " + dims_to_string(f_in.shape()) + " vs " +
                             dims_to_string(f_c0.shape()));
    }
    Tensor fused = fusion == FusionMode::kConcat ? ops::concat_last(f_in, f_c0) : ops::add(f_in, f_c0);
    return flatten_tokens(fused);
}

Tensor aggregate_next(const Tensor& tokens_prev, int height, int width, const Tensor& f_c_next, FusionMode fusion,
                      const Tensor& align_w, const Tensor& align_b) {
    if (tokens_prev.rank() != 3 || tokens_prev.dim(1) != height * width) {
        throw DimensionError("aggregate_next: token count does not match the stated extents");
    }
    const int c = tokens_prev.dim(2);
    if (c % 4 != 0) throw DimensionError("aggregate_next: token width must be divisible by 4");
    Tensor grid = ops::reshape(tokens_prev, {tokens_prev.dim(0), height, width, c});
    Tensor up = ops::pixel_shuffle(grid, 2);  // [N,2H,2W,C/4]
    if (fusion == FusionMode::kAdd) {
        // restore the fused width so the transformer stays as wide as in
        // concat mode
        up = ops::conv2d(up, align_w, 1, 0, align_b);
        if (up.shape() != f_c_next.shape()) {
            throw DimensionError("aggregate_next: aligned feature does not match the CNN feature");
        }
        return flatten_tokens(ops::add(up, f_c_next));
    }
    if (up.dim(1) != f_c_next.dim(1) || up.dim(2) != f_c_next.dim(2)) {
        throw DimensionError("aggregate_next: resolution mismatch with the CNN feature");
    }
    return flatten_tokens(ops::concat_last(up, f_c_next));
}

TransformerStem TransformerStem::create(const std::vector<int>& widths, const std::vector<int>& heads, int window,
                                        int depth, int mlp_ratio, FusionMode fusion, Rng& rng) {
    if (widths.empty() || widths.size() != heads.size()) throw ConfigError("transformer stem: bad width/head lists");
    TransformerStem stem;
    stem.window = window;
    stem.fusion = fusion;
    for (std::size_t j = 0; j < widths.size(); ++j) {
        stem.blocks.push_back(TransformerBlock::create(widths[j], heads[j], window, depth, mlp_ratio, rng));
    }
    if (fusion == FusionMode::kAdd) {
        for (std::size_t j = 1; j < widths.size(); ++j) {
            const int in = widths[j - 1] / 4;
            const int out = widths[j];
            stem.align_w.push_back(fan_in_normal(rng, {out, 1, 1, in}, in));
            stem.align_b.push_back(Tensor::zeros({out}, true));
        }
    }
    return stem;
}

Tensor transformer_stem_forward(const TransformerStem& stem, const Tensor& f_in, const std::vector<Tensor>& pyramid) {
    if (pyramid.size() != stem.blocks.size()) {
        throw DimensionError("transformer_stem_forward: pyramid depth does not match the block count");
    }
    const bool batched = f_in.rank() == 4;
    Tensor f = batched ? f_in : ops::reshape(f_in, {1, f_in.dim(0), f_in.dim(1), f_in.dim(2)});
    std::vector<Tensor> pyr;
    pyr.reserve(pyramid.size());
    for (const Tensor& t : pyramid) {
        pyr.push_back(t.rank() == 4 ? t : ops::reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)}));
    }

    int height = f.dim(1);
    int width = f.dim(2);
    Tensor tokens = aggregate_first(f, pyr[0], stem.fusion);
    tokens = transformer_block_forward(stem.blocks[0], tokens, height, width);
    for (std::size_t j = 1; j < stem.blocks.size(); ++j) {
        const Tensor align_w = stem.fusion == FusionMode::kAdd ? stem.align_w[j - 1] : Tensor();
        const Tensor align_b = stem.fusion == FusionMode::kAdd ? stem.align_b[j - 1] : Tensor();
        tokens = aggregate_next(tokens, height, width, pyr[j], stem.fusion, align_w, align_b);
        height *= 2;
        width *= 2;
        tokens = transformer_block_forward(stem.blocks[j], tokens, height, width);
    }
    return tokens;
}

}  // namespace csf
