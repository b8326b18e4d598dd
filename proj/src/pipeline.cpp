#include "csformer/pipeline.hpp"

#include <algorithm>

namespace csf {

Tensor clamp01(const Tensor& t) {
    Tensor out = Tensor::zeros(t.shape());
    auto o = out.values_mutable();
    auto v = t.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(v[i], 0.0, 1.0);
    return out;
}

namespace {

void check_pixel_range(const Tensor& image) {
    for (double v : image.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw UsageError("csformer_forward: image values must lie in [0,1]");
        }
    }
}

}  // namespace

ReconstructionResult csformer_forward(CsformerModel& model, const Tensor& image, Mode mode) {
    if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("csformer_forward: image must be [H,W,1]");
    check_pixel_range(image);
    const ModelConfig& cfg = model.config();
    const int stride = mode == Mode::kEval ? cfg.eval_overlap_stride : cfg.patch_size;

    ReconstructionResult result;
    result.layout = plan_patches(image.dim(0), image.dim(1), cfg.patch_size, stride);
    Tensor patches = split_patches(image, result.layout);
    const int np = patches.dim(0);
    const int p = cfg.patch_size;

    // bounded batches keep eval memory flat; results land in plain stacks
    Tensor outs = Tensor::zeros({np, p, p, 1});
    Tensor inis = Tensor::zeros({np, p, p, 1});
    Tensor ress = Tensor::zeros({np, p, p, 1});
    const int chunk = 8;
    const std::size_t patch_elems = static_cast<std::size_t>(p) * p;
    for (int at = 0; at < np; at += chunk) {
        const int take = std::min(chunk, np - at);
        std::vector<double> sub(patches.values().begin() + static_cast<std::ptrdiff_t>(at * patch_elems),
                                patches.values().begin() + static_cast<std::ptrdiff_t>((at + take) * patch_elems));
        Tensor batch = Tensor::from_data({take, p, p, 1}, std::move(sub));
        CsformerModel::PatchForward f = model.forward_patches(batch, mode, /*track_stats=*/mode == Mode::kTrain);
        std::copy_n(f.output.values().data(), take * patch_elems,
                    outs.values_mutable().data() + static_cast<std::size_t>(at) * patch_elems);
        std::copy_n(f.initial.values().data(), take * patch_elems,
                    inis.values_mutable().data() + static_cast<std::size_t>(at) * patch_elems);
        std::copy_n(f.residual.values().data(), take * patch_elems,
                    ress.values_mutable().data() + static_cast<std::size_t>(at) * patch_elems);
    }

    result.image = merge_patches(outs, result.layout);
    result.initial = merge_patches(inis, result.layout);
    result.residual = merge_patches(ress, result.layout);
    if (mode == Mode::kEval) result.image = clamp01(result.image);
    return result;
}

TrainForward train_forward(CsformerModel& model, const Tensor& crops, bool track_stats) {
    if (crops.rank() != 4 || crops.dim(3) != 1) throw DimensionError("train_forward: crops must be [N,H,W,1]");
    const ModelConfig& cfg = model.config();
    const int p = cfg.patch_size;
    const int n = crops.dim(0);
    const int h = crops.dim(1);
    const int w = crops.dim(2);
    if (h % p != 0 || w % p != 0) {
        throw UsageError("train_forward: crop extents must be multiples of H_p for non-overlapping training patches");
    }
    const int ty = h / p;
    const int tx = w / p;

    TrainForward out;
    Tensor patches = Tensor::zeros({n * ty * tx, p, p, 1});
    auto pv = patches.values_mutable();
    auto cv = crops.values();
    std::size_t idx = 0;
    for (int img = 0; img < n; ++img) {
        for (int by = 0; by < ty; ++by) {
            for (int bx = 0; bx < tx; ++bx) {
                out.anchors.push_back({img, by * p, bx * p});
                for (int y = 0; y < p; ++y) {
                    std::copy_n(cv.data() + (static_cast<std::size_t>(img) * h + by * p + y) * w + bx * p, p,
                                pv.data() + (idx * p + static_cast<std::size_t>(y)) * p);
                }
                ++idx;
            }
        }
    }

    CsformerModel::PatchForward f = model.forward_patches(patches, Mode::kTrain, track_stats);
    out.patch_outputs = f.output;
    out.merged = ops::mosaic_patches(f.output, out.anchors, n, h, w);
    return out;
}

Tensor training_loss(CsformerModel& model, const TrainForward& fwd, const Tensor& ground_truth) {
    if (ground_truth.shape() != fwd.merged.shape()) {
        throw UsageError("training_loss: ground truth shape does not match the merged output");
    }
    if (model.config().loss_target == LossTarget::kImage) {
        return ops::mean_squared_error(fwd.merged, ground_truth);
    }
    // patch target: compare patch stacks cut from the same anchors
    const int p = model.config().patch_size;
    const int h = ground_truth.dim(1);
    const int w = ground_truth.dim(2);
    Tensor gt_patches = Tensor::zeros({static_cast<int>(fwd.anchors.size()), p, p, 1});
    auto gv = gt_patches.values_mutable();
    auto tv = ground_truth.values();
    for (std::size_t i = 0; i < fwd.anchors.size(); ++i) {
        const ops::PatchAnchor& a = fwd.anchors[i];
        for (int y = 0; y < p; ++y) {
            std::copy_n(tv.data() + (static_cast<std::size_t>(a.image) * h + a.row + y) * w + a.col, p,
                        gv.data() + (i * p + static_cast<std::size_t>(y)) * p);
        }
    }
    return ops::mean_squared_error(fwd.patch_outputs, gt_patches);
}

}  // namespace csf
