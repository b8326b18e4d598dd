#include "csformer/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace csf {

int derive_m(double ratio, int block) {
    if (!(ratio > 0.0) || ratio > 1.0) {
        throw ConfigError("sampling ratio must lie in (0,1], got " + std::to_string(ratio));
    }
    if (block < 1) throw ConfigError("block size must be positive");
    const int full = block * block;
    const int m = static_cast<int>(std::lround(ratio * full));
    return std::clamp(m, 1, full);
}

SamplingOperator SamplingOperator::create(double ratio, int block, Rng& rng) {
    SamplingOperator op;
    op.block = block;
    op.ratio = ratio;
    op.measurements = derive_m(ratio, block);
    Tensor rows = orthogonal_rows(rng, op.measurements, block * block, 1.0 / block);
    auto v = rows.values();
    op.kernels = Tensor::from_data({op.measurements, block, block, 1}, std::vector<double>(v.begin(), v.end()),
                                   /*requires_grad=*/true);
    return op;
}

SamplingOperator SamplingOperator::from_matrix(const Tensor& phi, int block, double ratio) {
    if (phi.rank() != 2 || phi.dim(1) != block * block) {
        throw DimensionError("from_matrix: phi must be [m, B^2] with B = " + std::to_string(block));
    }
    SamplingOperator op;
    op.block = block;
    op.ratio = ratio;
    op.measurements = phi.dim(0);
    auto v = phi.values();
    op.kernels = Tensor::from_data({op.measurements, block, block, 1}, std::vector<double>(v.begin(), v.end()),
                                   /*requires_grad=*/true);
    return op;
}

Tensor sample_patch(const SamplingOperator& op, const Tensor& patch) {
    const bool batched = patch.rank() == 4;
    if (patch.rank() != 3 && !batched) throw DimensionError("sample_patch: patch must be [H,W,1] or [N,H,W,1]");
    const int h = patch.dim(batched ? 1 : 0);
    const int w = patch.dim(batched ? 2 : 1);
    if (patch.dim(-1) != 1) throw DimensionError("sample_patch: patch must be single channel");
    if (h % op.block != 0 || w % op.block != 0) {
        throw DimensionError("sample_patch: patch extents " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible by block " + std::to_string(op.block));
    }
    return ops::conv2d(patch, op.kernels, op.block, 0);
}

Tensor phi_as_matrix(const SamplingOperator& op) {
    auto v = op.kernels.values();
    return Tensor::from_data({op.measurements, op.block * op.block}, std::vector<double>(v.begin(), v.end()));
}

Tensor sample_blockwise_reference(const Tensor& patch, const Tensor& phi, int block) {
    if (patch.rank() != 3 || patch.dim(2) != 1) {
        throw DimensionError("sample_blockwise_reference: patch must be [H,W,1]");
    }
    if (phi.rank() != 2 || phi.dim(1) != block * block) {
        throw DimensionError("sample_blockwise_reference: phi must be [m,B^2]");
    }
    const int h = patch.dim(0);
    const int w = patch.dim(1);
    if (h % block != 0 || w % block != 0) {
        throw DimensionError("sample_blockwise_reference: patch extents not divisible by block");
    }
    const int m = phi.dim(0);
    const int gy = h / block;
    const int gx = w / block;
    Tensor grid = Tensor::zeros({gy, gx, m});
    auto g = grid.values_mutable();
    auto pv = patch.values();
    auto fv = phi.values();
    std::vector<double> vec(static_cast<std::size_t>(block) * block);
    for (int by = 0; by < gy; ++by) {
        for (int bx = 0; bx < gx; ++bx) {
            for (int y = 0; y < block; ++y)
                for (int x = 0; x < block; ++x)
                    vec[static_cast<std::size_t>(y) * block + x] =
                        pv[(static_cast<std::size_t>(by * block + y) * w) + bx * block + x];
            for (int r = 0; r < m; ++r) {
                double acc = 0.0;
                for (std::size_t i = 0; i < vec.size(); ++i) acc += fv[static_cast<std::size_t>(r) * vec.size() + i] * vec[i];
                g[(static_cast<std::size_t>(by) * gx + bx) * m + r] = acc;
            }
        }
    }
    ensure_finite(grid, "sample_blockwise_reference");
    return grid;
}

}  // namespace csf
