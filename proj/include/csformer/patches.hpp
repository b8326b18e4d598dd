#pragma once

#include <vector>

#include "csformer/tensor.hpp"

namespace csf {

// Anchor plan for cutting an image into patch_size x patch_size tiles.
// Anchors sit at multiples of `stride` plus a final anchor flush with each
// border; images smaller than a patch are reflect-padded first and the
// margins are cropped again after merging.
struct PatchLayout {
    int image_h = 0, image_w = 0;    // original extents
    int padded_h = 0, padded_w = 0;  // extents the anchors address
    int patch_size = 0;
    int stride = 0;
    std::vector<int> rows, cols;  // anchor coordinates per axis

    int num_patches() const { return static_cast<int>(rows.size() * cols.size()); }
};

PatchLayout plan_patches(int image_h, int image_w, int patch_size, int stride);

// image [H,W,1] -> patches [Np, patch, patch, 1] in row-major anchor order.
Tensor split_patches(const Tensor& image, const PatchLayout& layout);

// Weighted overlap-average merge; every pixel of the padded canvas is
// covered by >= 1 patch, overlaps are arithmetic means, padding margins are
// cropped. Plain (non-taped) computation for the evaluation path.
Tensor merge_patches(const Tensor& patches, const PatchLayout& layout);

// Reflected (mirror, no edge repeat) padding on the bottom/right to reach
// at least [h, w].
Tensor reflect_pad_to(const Tensor& image, int h, int w);

}  // namespace csf
