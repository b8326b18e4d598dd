#include "csformer/patches.hpp"

#include <algorithm>

namespace csf {

namespace {

std::vector<int> axis_anchors(int padded, int patch, int stride) {
    std::vector<int> anchors;
    for (int a = 0; a + patch <= padded; a += stride) anchors.push_back(a);
    const int last = padded - patch;
    if (anchors.empty() || anchors.back() != last) anchors.push_back(last);
    return anchors;
}

// mirror index into [0, n) without repeating the edge sample
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

PatchLayout plan_patches(int image_h, int image_w, int patch_size, int stride) {
    if (patch_size < 1 || stride < 1) throw UsageError("plan_patches: patch and stride must be positive");
    PatchLayout layout;
    layout.image_h = image_h;
    layout.image_w = image_w;
    layout.patch_size = patch_size;
    layout.stride = stride;
    layout.padded_h = std::max(image_h, patch_size);
    layout.padded_w = std::max(image_w, patch_size);
    layout.rows = axis_anchors(layout.padded_h, patch_size, stride);
    layout.cols = axis_anchors(layout.padded_w, patch_size, stride);
    return layout;
}

Tensor reflect_pad_to(const Tensor& image, int h, int w) {
    if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("reflect_pad_to: image must be [H,W,1]");
    const int ih = image.dim(0);
    const int iw = image.dim(1);
    if (ih >= h && iw >= w) return image;
    const int oh = std::max(ih, h);
    const int ow = std::max(iw, w);
    Tensor out = Tensor::zeros({oh, ow, 1});
    auto ov = out.values_mutable();
    auto iv = image.values();
    for (int y = 0; y < oh; ++y) {
        const int sy = reflect_index(y, ih);
        for (int x = 0; x < ow; ++x) {
            ov[static_cast<std::size_t>(y) * ow + x] = iv[static_cast<std::size_t>(sy) * iw + reflect_index(x, iw)];
        }
    }
    return out;
}

Tensor split_patches(const Tensor& image, const PatchLayout& layout) {
    Tensor padded = reflect_pad_to(image, layout.padded_h, layout.padded_w);
    if (padded.dim(0) != layout.padded_h || padded.dim(1) != layout.padded_w) {
        throw DimensionError("split_patches: layout does not match the image");
    }
    const int p = layout.patch_size;
    Tensor patches = Tensor::zeros({layout.num_patches(), p, p, 1});
    auto pv = patches.values_mutable();
    auto iv = padded.values();
    std::size_t idx = 0;
    for (int ar : layout.rows) {
        for (int ac : layout.cols) {
            for (int y = 0; y < p; ++y) {
                std::copy_n(iv.data() + static_cast<std::size_t>(ar + y) * layout.padded_w + ac, p,
                            pv.data() + (idx * p + static_cast<std::size_t>(y)) * p);
            }
            ++idx;
        }
    }
    return patches;
}

Tensor merge_patches(const Tensor& patches, const PatchLayout& layout) {
    const int p = layout.patch_size;
    if (patches.rank() != 4 || patches.dim(0) != layout.num_patches() || patches.dim(1) != p || patches.dim(2) != p ||
        patches.dim(3) != 1) {
        throw UsageError("merge_patches: patch stack does not match the layout");
    }
    std::vector<double> acc(static_cast<std::size_t>(layout.padded_h) * layout.padded_w, 0.0);
    std::vector<double> weight(acc.size(), 0.0);
    auto pv = patches.values();
    std::size_t idx = 0;
    for (int ar : layout.rows) {
        for (int ac : layout.cols) {
            for (int y = 0; y < p; ++y) {
                const std::size_t dst = static_cast<std::size_t>(ar + y) * layout.padded_w + ac;
                const double* src = pv.data() + (idx * p + static_cast<std::size_t>(y)) * p;
                for (int x = 0; x < p; ++x) {
                    acc[dst + x] += src[x];
                    weight[dst + x] += 1.0;
                }
            }
            ++idx;
        }
    }
    Tensor out = Tensor::zeros({layout.image_h, layout.image_w, 1});
    auto ov = out.values_mutable();
    for (int y = 0; y < layout.image_h; ++y) {
        for (int x = 0; x < layout.image_w; ++x) {
            const std::size_t s = static_cast<std::size_t>(y) * layout.padded_w + x;
            if (weight[s] <= 0.0) throw UsageError("merge_patches: uncovered pixel");
            ov[static_cast<std::size_t>(y) * layout.image_w + x] = acc[s] / weight[s];
        }
    }
    return out;
}

}  // namespace csf
