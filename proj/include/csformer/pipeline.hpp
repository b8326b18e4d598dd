#pragma once

#include "csformer/model.hpp"
#include "csformer/patches.hpp"

namespace csf {

// Whole-image reconstruction: split, dual-stem forward per patch, residual
// sum, merge. Values are clamped to [0,1] in eval mode only.
struct ReconstructionResult {
    Tensor image;     // [H,W,1]
    Tensor initial;   // merged initial estimates (diagnostic)
    Tensor residual;  // merged residual corrections (diagnostic)
    PatchLayout layout;
};

ReconstructionResult csformer_forward(CsformerModel& model, const Tensor& image, Mode mode);

// Training-side forward over a batch of crops [N,H,W,1]; crops must tile
// exactly with stride H_p. Outputs stay un-clamped so gradients flow.
struct TrainForward {
    Tensor patch_outputs;  // [Np,Hp,Wp,1]
    Tensor merged;         // [N,H,W,1]
    std::vector<ops::PatchAnchor> anchors;
};

TrainForward train_forward(CsformerModel& model, const Tensor& crops, bool track_stats = true);

// Eq.-style mean squared error per the configured target: on the merged
// (un-clamped) images, or on the patch stacks.
Tensor training_loss(CsformerModel& model, const TrainForward& fwd, const Tensor& ground_truth);

Tensor clamp01(const Tensor& t);

}  // namespace csf
