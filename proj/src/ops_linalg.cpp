#include <algorithm>
#include <cmath>
#include <cstring>

#include "csformer/ops.hpp"
#include "ops_common.hpp"

namespace csf::ops {

using detail::gemm;
using detail::record;

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul: operands must have rank >= 2");
    const int n = a.dim(-2);
    const int k = a.dim(-1);
    if (b.dim(-2) != k) {
        throw DimensionError("matmul: inner extents differ, " + dims_to_string(a.shape()) + " x " +
                             dims_to_string(b.shape()));
    }
    const int p = b.dim(-1);

    const bool shared_rhs = b.rank() == 2;
    if (!shared_rhs) {
        if (a.rank() != b.rank()) throw DimensionError("matmul: batch rank mismatch");
        for (int i = 0; i + 2 < a.rank(); ++i) {
            if (a.dim(i) != b.dim(i)) throw DimensionError("matmul: batch extents differ");
        }
    }

    Dims out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(p);
    Tensor out = Tensor::zeros(out_shape);

    const std::int64_t batches = a.numel() / (static_cast<std::int64_t>(n) * k);
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mutable();
    if (shared_rhs) {
        const int m_total = static_cast<int>(batches) * n;
        gemm(false, false, m_total, p, k, 1.0, av.data(), k, bv.data(), p, 0.0, ov.data(), p);
    } else {
        for (std::int64_t i = 0; i < batches; ++i) {
            gemm(false, false, n, p, k, 1.0, av.data() + i * n * k, k, bv.data() + i * k * p, p, 0.0,
                 ov.data() + i * n * p, p);
        }
    }
    ensure_finite(out, "matmul");

    record({&a, &b}, out, [a, b, out, n, k, p, batches, shared_rhs]() {
        auto g = out.grad();
        auto av2 = a.values();
        auto bv2 = b.values();
        if (a.requires_grad()) {
            std::vector<double> ga(av2.size());
            if (shared_rhs) {
                const int m_total = static_cast<int>(batches) * n;
                gemm(false, true, m_total, k, p, 1.0, g.data(), p, bv2.data(), p, 0.0, ga.data(), k);
            } else {
                for (std::int64_t i = 0; i < batches; ++i) {
                    gemm(false, true, n, k, p, 1.0, g.data() + i * n * p, p, bv2.data() + i * k * p, p, 0.0,
                         ga.data() + i * n * k, k);
                }
            }
            a.accumulate_grad(ga);
        }
        if (b.requires_grad()) {
            std::vector<double> gb(bv2.size(), 0.0);
            if (shared_rhs) {
                const int m_total = static_cast<int>(batches) * n;
                gemm(true, false, k, p, m_total, 1.0, av2.data(), k, g.data(), p, 0.0, gb.data(), p);
            } else {
                for (std::int64_t i = 0; i < batches; ++i) {
                    gemm(true, false, k, p, n, 1.0, av2.data() + i * n * k, k, g.data() + i * n * p, p, 0.0,
                         gb.data() + i * k * p, p);
                }
            }
            b.accumulate_grad(gb);
        }
    });
    return out;
}

// ---- conv2d ----

namespace {

struct ConvDims {
    int n, h, w, ci;       // input
    int co, kh, kw;        // kernels
    int stride, pad;
    int ho, wo;
    bool batched_input;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
    if (kernels.rank() != 4) throw DimensionError("conv2d: kernels must be [Cout,kh,kw,Cin]");
    ConvDims d{};
    d.batched_input = input.rank() == 4;
    if (input.rank() != 3 && input.rank() != 4) throw DimensionError("conv2d: input must be [H,W,C] or [N,H,W,C]");
    d.n = d.batched_input ? input.dim(0) : 1;
    d.h = input.dim(d.batched_input ? 1 : 0);
    d.w = input.dim(d.batched_input ? 2 : 1);
    d.ci = input.dim(-1);
    d.co = kernels.dim(0);
    d.kh = kernels.dim(1);
    d.kw = kernels.dim(2);
    if (kernels.dim(3) != d.ci) {
        throw DimensionError("conv2d: input has " + std::to_string(d.ci) + " channels but kernels expect " +
                             std::to_string(kernels.dim(3)));
    }
    if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    d.stride = stride;
    d.pad = padding;
    d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
    d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
    return d;
}

// Row (n,oy,ox) of the column matrix holds the kh*kw*ci receptive field in
// kernel layout order; out-of-bounds taps contribute zeros.
void im2col(std::span<const double> x, const ConvDims& d, std::vector<double>& col) {
    const std::size_t krow = static_cast<std::size_t>(d.kh) * d.kw * d.ci;
    col.assign(static_cast<std::size_t>(d.n) * d.ho * d.wo * krow, 0.0);
    const std::size_t in_row = static_cast<std::size_t>(d.w) * d.ci;
    std::size_t row = 0;
    for (int n = 0; n < d.n; ++n) {
        const double* img = x.data() + static_cast<std::size_t>(n) * d.h * in_row;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox, ++row) {
                double* dst = col.data() + row * krow;
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        std::memcpy(dst + (static_cast<std::size_t>(ky) * d.kw + kx) * d.ci,
                                    img + static_cast<std::size_t>(iy) * in_row + static_cast<std::size_t>(ix) * d.ci,
                                    sizeof(double) * static_cast<std::size_t>(d.ci));
                    }
                }
            }
        }
    }
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, std::span<double> gx) {
    const std::size_t krow = static_cast<std::size_t>(d.kh) * d.kw * d.ci;
    const std::size_t in_row = static_cast<std::size_t>(d.w) * d.ci;
    std::size_t row = 0;
    for (int n = 0; n < d.n; ++n) {
        double* img = gx.data() + static_cast<std::size_t>(n) * d.h * in_row;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox, ++row) {
                const double* src = col.data() + row * krow;
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        const double* s = src + (static_cast<std::size_t>(ky) * d.kw + kx) * d.ci;
                        double* t = img + static_cast<std::size_t>(iy) * in_row + static_cast<std::size_t>(ix) * d.ci;
                        for (int c = 0; c < d.ci; ++c) t[c] += s[c];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding, const Tensor& bias) {
    const ConvDims d = conv_dims(input, kernels, stride, padding);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.co)) {
        throw DimensionError("conv2d: bias must have shape [Cout]");
    }

    std::vector<double> col;
    im2col(input.values(), d, col);
    const int rows = d.n * d.ho * d.wo;
    const int krow = d.kh * d.kw * d.ci;

    Dims out_shape = d.batched_input ? Dims{d.n, d.ho, d.wo, d.co} : Dims{d.ho, d.wo, d.co};
    Tensor out = Tensor::zeros(out_shape);
    auto ov = out.values_mutable();
    gemm(false, true, rows, d.co, krow, 1.0, col.data(), krow, kernels.values().data(), krow, 0.0, ov.data(), d.co);
    if (bias.defined()) {
        auto bv = bias.values();
        for (int r = 0; r < rows; ++r) {
            double* dst = ov.data() + static_cast<std::size_t>(r) * d.co;
            for (int c = 0; c < d.co; ++c) dst[c] += bv[static_cast<std::size_t>(c)];
        }
    }
    ensure_finite(out, "conv2d");

    auto backward_fn = [input, kernels, bias, out, d, rows, krow]() {
        auto g = out.grad();
        // the column matrix is rebuilt rather than kept alive with the tape
        std::vector<double> col2;
        if (input.requires_grad() || kernels.requires_grad()) im2col(input.values(), d, col2);
        if (kernels.requires_grad()) {
            std::vector<double> gw(static_cast<std::size_t>(d.co) * krow);
            gemm(true, false, d.co, krow, rows, 1.0, g.data(), d.co, col2.data(), krow, 0.0, gw.data(), krow);
            kernels.accumulate_grad(gw);
        }
        if (bias.defined() && bias.requires_grad()) {
            std::vector<double> gb(static_cast<std::size_t>(d.co), 0.0);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < d.co; ++c) gb[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r) * d.co + c];
            bias.accumulate_grad(gb);
        }
        if (input.requires_grad()) {
            std::vector<double> gcol(col2.size());
            gemm(false, false, rows, krow, d.co, 1.0, g.data(), d.co, kernels.values().data(), krow, 0.0, gcol.data(),
                 krow);
            std::vector<double> gx(static_cast<std::size_t>(input.numel()), 0.0);
            col2im_add(gcol, d, gx);
            input.accumulate_grad(gx);
        }
    };
    if (bias.defined()) {
        record({&input, &kernels, &bias}, out, std::move(backward_fn));
    } else {
        record({&input, &kernels}, out, std::move(backward_fn));
    }
    return out;
}

// ---- pixel shuffle ----

namespace {

struct ShuffleDims {
    int n, h, w, c_in;
    bool batched;
};

ShuffleDims shuffle_dims(const Tensor& x) {
    if (x.rank() != 3 && x.rank() != 4) throw DimensionError("pixel_shuffle: input must be [H,W,C] or [N,H,W,C]");
    ShuffleDims d{};
    d.batched = x.rank() == 4;
    d.n = d.batched ? x.dim(0) : 1;
    d.h = x.dim(d.batched ? 1 : 0);
    d.w = x.dim(d.batched ? 2 : 1);
    d.c_in = x.dim(-1);
    return d;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
    const ShuffleDims d = shuffle_dims(x);
    if (r < 1) throw DimensionError("pixel_shuffle: factor must be >= 1");
    if (d.c_in % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: " + std::to_string(d.c_in) + " channels not divisible by r^2 = " +
                             std::to_string(r * r));
    }
    const int co = d.c_in / (r * r);
    const int ho = d.h * r;
    const int wo = d.w * r;
    Dims out_shape = d.batched ? Dims{d.n, ho, wo, co} : Dims{ho, wo, co};
    Tensor out = Tensor::zeros(out_shape);
    auto ov = out.values_mutable();
    auto xv = x.values();
    for (int n = 0; n < d.n; ++n) {
        const double* src = xv.data() + static_cast<std::size_t>(n) * d.h * d.w * d.c_in;
        double* dst = ov.data() + static_cast<std::size_t>(n) * ho * wo * co;
        for (int y = 0; y < ho; ++y) {
            for (int xq = 0; xq < wo; ++xq) {
                const std::size_t in_base =
                    (static_cast<std::size_t>(y / r) * d.w + (xq / r)) * d.c_in +
                    static_cast<std::size_t>(((y % r) * r + (xq % r))) * co;
                const std::size_t out_base = (static_cast<std::size_t>(y) * wo + xq) * co;
                std::memcpy(dst + out_base, src + in_base, sizeof(double) * static_cast<std::size_t>(co));
            }
        }
    }
    record({&x}, out, [x, out, d, r, co, ho, wo]() {
        auto g = out.grad();
        std::vector<double> gx(static_cast<std::size_t>(x.numel()));
        for (int n = 0; n < d.n; ++n) {
            double* dst = gx.data() + static_cast<std::size_t>(n) * d.h * d.w * d.c_in;
            const double* src = g.data() + static_cast<std::size_t>(n) * ho * wo * co;
            for (int y = 0; y < ho; ++y) {
                for (int xq = 0; xq < wo; ++xq) {
                    const std::size_t in_base =
                        (static_cast<std::size_t>(y / r) * d.w + (xq / r)) * d.c_in +
                        static_cast<std::size_t>(((y % r) * r + (xq % r))) * co;
                    const std::size_t out_base = (static_cast<std::size_t>(y) * wo + xq) * co;
                    std::memcpy(dst + in_base, src + out_base, sizeof(double) * static_cast<std::size_t>(co));
                }
            }
        }
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    const ShuffleDims d = shuffle_dims(x);
    if (r < 1) throw DimensionError("pixel_unshuffle: factor must be >= 1");
    if (d.h % r != 0 || d.w % r != 0) throw DimensionError("pixel_unshuffle: spatial extents not divisible by r");
    const int ho = d.h / r;
    const int wo = d.w / r;
    const int co = d.c_in * r * r;
    Dims out_shape = d.batched ? Dims{d.n, ho, wo, co} : Dims{ho, wo, co};
    Tensor out = Tensor::zeros(out_shape);
    auto ov = out.values_mutable();
    auto xv = x.values();
    for (int n = 0; n < d.n; ++n) {
        const double* src = xv.data() + static_cast<std::size_t>(n) * d.h * d.w * d.c_in;
        double* dst = ov.data() + static_cast<std::size_t>(n) * ho * wo * co;
        for (int y = 0; y < d.h; ++y) {
            for (int xq = 0; xq < d.w; ++xq) {
                const std::size_t out_base =
                    (static_cast<std::size_t>(y / r) * wo + (xq / r)) * co +
                    static_cast<std::size_t>(((y % r) * r + (xq % r))) * d.c_in;
                const std::size_t in_base = (static_cast<std::size_t>(y) * d.w + xq) * d.c_in;
                std::memcpy(dst + out_base, src + in_base, sizeof(double) * static_cast<std::size_t>(d.c_in));
            }
        }
    }
    record({&x}, out, [x, out, d, r, co, ho, wo]() {
        auto g = out.grad();
        std::vector<double> gx(static_cast<std::size_t>(x.numel()));
        for (int n = 0; n < d.n; ++n) {
            double* dst = gx.data() + static_cast<std::size_t>(n) * d.h * d.w * d.c_in;
            const double* src = g.data() + static_cast<std::size_t>(n) * ho * wo * co;
            for (int y = 0; y < d.h; ++y) {
                for (int xq = 0; xq < d.w; ++xq) {
                    const std::size_t out_base =
                        (static_cast<std::size_t>(y / r) * wo + (xq / r)) * co +
                        static_cast<std::size_t>(((y % r) * r + (xq % r))) * d.c_in;
                    const std::size_t in_base = (static_cast<std::size_t>(y) * d.w + xq) * d.c_in;
                    std::memcpy(dst + in_base, src + out_base, sizeof(double) * static_cast<std::size_t>(d.c_in));
                }
            }
        }
        x.accumulate_grad(gx);
    });
    return out;
}

// ---- bicubic upsample ----

namespace {

double cubic_weight(double t) {
    constexpr double a = -0.75;
    const double at = std::abs(t);
    if (at <= 1.0) return ((a + 2.0) * at - (a + 3.0)) * at * at + 1.0;
    if (at < 2.0) return a * (((at - 5.0) * at + 8.0) * at - 4.0);
    return 0.0;
}

struct CubicTaps {
    std::vector<int> idx;     // 4 per output coordinate, edge-clamped
    std::vector<double> w;    // matching weights
};

CubicTaps cubic_taps(int in_size, int scale) {
    const int out_size = in_size * scale;
    CubicTaps t;
    t.idx.resize(static_cast<std::size_t>(out_size) * 4);
    t.w.resize(static_cast<std::size_t>(out_size) * 4);
    for (int o = 0; o < out_size; ++o) {
        const double src = (o + 0.5) / scale - 0.5;
        const int base = static_cast<int>(std::floor(src));
        const double frac = src - base;
        for (int k = 0; k < 4; ++k) {
            const int tap = base - 1 + k;
            t.idx[static_cast<std::size_t>(o) * 4 + k] = std::clamp(tap, 0, in_size - 1);
            t.w[static_cast<std::size_t>(o) * 4 + k] = cubic_weight(frac - (k - 1));
        }
    }
    return t;
}

}  // namespace

Tensor bicubic_upsample(const Tensor& x, int scale) {
    if (scale < 2) throw DimensionError("bicubic_upsample: scale must be >= 2");
    const ShuffleDims d = shuffle_dims(x);
    const int ho = d.h * scale;
    const int wo = d.w * scale;
    const CubicTaps ty = cubic_taps(d.h, scale);
    const CubicTaps tx = cubic_taps(d.w, scale);
    const std::size_t c = static_cast<std::size_t>(d.c_in);

    // separable: vertical pass into tmp, then horizontal pass
    auto vertical = [&](std::span<const double> src, std::vector<double>& tmp) {
        tmp.assign(static_cast<std::size_t>(d.n) * ho * d.w * c, 0.0);
        for (int n = 0; n < d.n; ++n) {
            const double* in = src.data() + static_cast<std::size_t>(n) * d.h * d.w * c;
            double* out_p = tmp.data() + static_cast<std::size_t>(n) * ho * d.w * c;
            for (int oy = 0; oy < ho; ++oy) {
                double* row = out_p + static_cast<std::size_t>(oy) * d.w * c;
                for (int k = 0; k < 4; ++k) {
                    const double wgt = ty.w[static_cast<std::size_t>(oy) * 4 + k];
                    const double* src_row =
                        in + static_cast<std::size_t>(ty.idx[static_cast<std::size_t>(oy) * 4 + k]) * d.w * c;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(d.w) * c; ++i) row[i] += wgt * src_row[i];
                }
            }
        }
    };

    std::vector<double> tmp;
    vertical(x.values(), tmp);

    Dims out_shape = d.batched ? Dims{d.n, ho, wo, d.c_in} : Dims{ho, wo, d.c_in};
    Tensor out = Tensor::zeros(out_shape);
    auto ov = out.values_mutable();
    for (int n = 0; n < d.n; ++n) {
        const double* in = tmp.data() + static_cast<std::size_t>(n) * ho * d.w * c;
        double* out_p = ov.data() + static_cast<std::size_t>(n) * ho * wo * c;
        for (int oy = 0; oy < ho; ++oy) {
            const double* src_row = in + static_cast<std::size_t>(oy) * d.w * c;
            double* dst_row = out_p + static_cast<std::size_t>(oy) * wo * c;
            for (int ox = 0; ox < wo; ++ox) {
                double* px = dst_row + static_cast<std::size_t>(ox) * c;
                for (int k = 0; k < 4; ++k) {
                    const double wgt = tx.w[static_cast<std::size_t>(ox) * 4 + k];
                    const double* sp = src_row + static_cast<std::size_t>(tx.idx[static_cast<std::size_t>(ox) * 4 + k]) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) px[ch] += wgt * sp[ch];
                }
            }
        }
    }
    ensure_finite(out, "bicubic_upsample");

    record({&x}, out, [x, out, d, scale, ty, tx, ho, wo, c]() {
        auto g = out.grad();
        // transpose of the horizontal pass
        std::vector<double> gtmp(static_cast<std::size_t>(d.n) * ho * d.w * c, 0.0);
        for (int n = 0; n < d.n; ++n) {
            double* dst = gtmp.data() + static_cast<std::size_t>(n) * ho * d.w * c;
            const double* src = g.data() + static_cast<std::size_t>(n) * ho * wo * c;
            for (int oy = 0; oy < ho; ++oy) {
                double* dst_row = dst + static_cast<std::size_t>(oy) * d.w * c;
                const double* src_row = src + static_cast<std::size_t>(oy) * wo * c;
                for (int ox = 0; ox < wo; ++ox) {
                    const double* px = src_row + static_cast<std::size_t>(ox) * c;
                    for (int k = 0; k < 4; ++k) {
                        const double wgt = tx.w[static_cast<std::size_t>(ox) * 4 + k];
                        double* dp = dst_row + static_cast<std::size_t>(tx.idx[static_cast<std::size_t>(ox) * 4 + k]) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) dp[ch] += wgt * px[ch];
                    }
                }
            }
        }
        // transpose of the vertical pass
        std::vector<double> gx(static_cast<std::size_t>(x.numel()), 0.0);
        for (int n = 0; n < d.n; ++n) {
            double* dst = gx.data() + static_cast<std::size_t>(n) * d.h * d.w * c;
            const double* src = gtmp.data() + static_cast<std::size_t>(n) * ho * d.w * c;
            for (int oy = 0; oy < ho; ++oy) {
                const double* src_row = src + static_cast<std::size_t>(oy) * d.w * c;
                for (int k = 0; k < 4; ++k) {
                    const double wgt = ty.w[static_cast<std::size_t>(oy) * 4 + k];
                    double* dst_row =
                        dst + static_cast<std::size_t>(ty.idx[static_cast<std::size_t>(oy) * 4 + k]) * d.w * c;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(d.w) * c; ++i) dst_row[i] += wgt * src_row[i];
                }
            }
        }
        x.accumulate_grad(gx);
    });
    return out;
}

// ---- window partition / merge ----

namespace {

void check_window_dims(int height, int width, int window, int tokens, int rows) {
    if (window < 1) throw DimensionError("window ops: window must be >= 1");
    if (height % window != 0 || width % window != 0) {
        throw DimensionError("window ops: " + std::to_string(height) + "x" + std::to_string(width) +
                             " not divisible by window " + std::to_string(window));
    }
    if (tokens != height * width && rows >= 0) {
        throw DimensionError("window ops: token count does not match spatial extents");
    }
}

}  // namespace

Tensor window_partition(const Tensor& x, int height, int width, int window) {
    if (x.rank() != 3) throw DimensionError("window_partition: input must be [N,T,C]");
    check_window_dims(height, width, window, x.dim(1), 0);
    const int n = x.dim(0);
    const std::size_t c = static_cast<std::size_t>(x.dim(2));
    const int wy = height / window;
    const int wx = width / window;
    const int num_windows = wy * wx;
    const int p2 = window * window;
    Tensor out = Tensor::zeros({n * num_windows, p2, static_cast<int>(c)});
    auto ov = out.values_mutable();
    auto xv = x.values();
    for (int b = 0; b < n; ++b) {
        const double* src = xv.data() + static_cast<std::size_t>(b) * height * width * c;
        for (int w = 0; w < num_windows; ++w) {
            const int oy = (w / wx) * window;
            const int ox = (w % wx) * window;
            double* dst = ov.data() + (static_cast<std::size_t>(b) * num_windows + w) * p2 * c;
            for (int py = 0; py < window; ++py) {
                std::memcpy(dst + static_cast<std::size_t>(py) * window * c,
                            src + (static_cast<std::size_t>(oy + py) * width + ox) * c,
                            sizeof(double) * static_cast<std::size_t>(window) * c);
            }
        }
    }
    record({&x}, out, [x, out, n, c, height, width, window, num_windows, wx, p2]() {
        auto g = out.grad();
        std::vector<double> gx(static_cast<std::size_t>(x.numel()));
        for (int b = 0; b < n; ++b) {
            double* dst = gx.data() + static_cast<std::size_t>(b) * height * width * c;
            for (int w = 0; w < num_windows; ++w) {
                const int oy = (w / wx) * window;
                const int ox = (w % wx) * window;
                const double* src = g.data() + (static_cast<std::size_t>(b) * num_windows + w) * p2 * c;
                for (int py = 0; py < window; ++py) {
                    std::memcpy(dst + (static_cast<std::size_t>(oy + py) * width + ox) * c,
                                src + static_cast<std::size_t>(py) * window * c,
                                sizeof(double) * static_cast<std::size_t>(window) * c);
                }
            }
        }
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor window_merge(const Tensor& windows, int height, int width, int window) {
    if (windows.rank() != 3) throw DimensionError("window_merge: input must be [N*numWindows,P^2,C]");
    check_window_dims(height, width, window, height * width, 0);
    const int p2 = window * window;
    if (windows.dim(1) != p2) throw DimensionError("window_merge: second extent must be window^2");
    const int wy = height / window;
    const int wx = width / window;
    const int num_windows = wy * wx;
    if (windows.dim(0) % num_windows != 0) {
        throw DimensionError("window_merge: window count not a multiple of windows per image");
    }
    const int n = windows.dim(0) / num_windows;
    const std::size_t c = static_cast<std::size_t>(windows.dim(2));
    Tensor out = Tensor::zeros({n, height * width, static_cast<int>(c)});
    auto ov = out.values_mutable();
    auto xv = windows.values();
    for (int b = 0; b < n; ++b) {
        double* dst = ov.data() + static_cast<std::size_t>(b) * height * width * c;
        for (int w = 0; w < num_windows; ++w) {
            const int oy = (w / wx) * window;
            const int ox = (w % wx) * window;
            const double* src = xv.data() + (static_cast<std::size_t>(b) * num_windows + w) * p2 * c;
            for (int py = 0; py < window; ++py) {
                std::memcpy(dst + (static_cast<std::size_t>(oy + py) * width + ox) * c,
                            src + static_cast<std::size_t>(py) * window * c,
                            sizeof(double) * static_cast<std::size_t>(window) * c);
            }
        }
    }
    record({&windows}, out, [windows, out, n, c, height, width, window, num_windows, wx, p2]() {
        auto g = out.grad();
        std::vector<double> gx(static_cast<std::size_t>(windows.numel()));
        for (int b = 0; b < n; ++b) {
            const double* src = g.data() + static_cast<std::size_t>(b) * height * width * c;
            for (int w = 0; w < num_windows; ++w) {
                const int oy = (w / wx) * window;
                const int ox = (w % wx) * window;
                double* dst = gx.data() + (static_cast<std::size_t>(b) * num_windows + w) * p2 * c;
                for (int py = 0; py < window; ++py) {
                    std::memcpy(dst + static_cast<std::size_t>(py) * window * c,
                                src + (static_cast<std::size_t>(oy + py) * width + ox) * c,
                                sizeof(double) * static_cast<std::size_t>(window) * c);
                }
            }
        }
        windows.accumulate_grad(gx);
    });
    return out;
}

// ---- attention ----

namespace {

void check_heads(int channels, int heads, const char* op) {
    if (heads < 1 || channels % heads != 0) {
        throw DimensionError(std::string(op) + ": " + std::to_string(channels) + " channels not divisible by " +
                             std::to_string(heads) + " heads");
    }
}

}  // namespace

Tensor attn_scores(const Tensor& q, const Tensor& k, int heads, double scale) {
    if (q.rank() != 3 || k.rank() != 3 || q.shape() != k.shape()) {
        throw DimensionError("attn_scores: q and k must both be [B,T,C]");
    }
    const int b = q.dim(0);
    const int t = q.dim(1);
    const int c = q.dim(2);
    check_heads(c, heads, "attn_scores");
    const int d = c / heads;
    Tensor out = Tensor::zeros({b, heads, t, t});
    auto ov = out.values_mutable();
    auto qv = q.values();
    auto kv = k.values();
    for (int bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const double* qp = qv.data() + static_cast<std::size_t>(bi) * t * c + static_cast<std::size_t>(h) * d;
            const double* kp = kv.data() + static_cast<std::size_t>(bi) * t * c + static_cast<std::size_t>(h) * d;
            double* op = ov.data() + (static_cast<std::size_t>(bi) * heads + h) * t * t;
            gemm(false, true, t, t, d, scale, qp, c, kp, c, 0.0, op, t);
        }
    }
    ensure_finite(out, "attn_scores");
    record({&q, &k}, out, [q, k, out, b, t, c, heads, d, scale]() {
        auto g = out.grad();
        auto qv2 = q.values();
        auto kv2 = k.values();
        std::vector<double> gq, gk;
        if (q.requires_grad()) gq.assign(qv2.size(), 0.0);
        if (k.requires_grad()) gk.assign(kv2.size(), 0.0);
        for (int bi = 0; bi < b; ++bi) {
            for (int h = 0; h < heads; ++h) {
                const std::size_t off = static_cast<std::size_t>(bi) * t * c + static_cast<std::size_t>(h) * d;
                const double* gs = g.data() + (static_cast<std::size_t>(bi) * heads + h) * t * t;
                if (q.requires_grad()) {
                    gemm(false, false, t, d, t, scale, gs, t, kv2.data() + off, c, 0.0, gq.data() + off, c);
                }
                if (k.requires_grad()) {
                    gemm(true, false, t, d, t, scale, gs, t, qv2.data() + off, c, 0.0, gk.data() + off, c);
                }
            }
        }
        if (q.requires_grad()) q.accumulate_grad(gq);
        if (k.requires_grad()) k.accumulate_grad(gk);
    });
    return out;
}

Tensor attn_context(const Tensor& probs, const Tensor& v, int heads) {
    if (probs.rank() != 4 || v.rank() != 3) throw DimensionError("attn_context: expected [B,h,T,T] and [B,T,C]");
    const int b = v.dim(0);
    const int t = v.dim(1);
    const int c = v.dim(2);
    check_heads(c, heads, "attn_context");
    const int d = c / heads;
    if (probs.dim(0) != b || probs.dim(1) != heads || probs.dim(2) != t || probs.dim(3) != t) {
        throw DimensionError("attn_context: probs shape " + dims_to_string(probs.shape()) + " inconsistent with v " +
                             dims_to_string(v.shape()));
    }
    Tensor out = Tensor::zeros({b, t, c});
    auto ov = out.values_mutable();
    auto pv = probs.values();
    auto vv = v.values();
    for (int bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const double* pp = pv.data() + (static_cast<std::size_t>(bi) * heads + h) * t * t;
            const std::size_t off = static_cast<std::size_t>(bi) * t * c + static_cast<std::size_t>(h) * d;
            gemm(false, false, t, d, t, 1.0, pp, t, vv.data() + off, c, 0.0, ov.data() + off, c);
        }
    }
    ensure_finite(out, "attn_context");
    record({&probs, &v}, out, [probs, v, out, b, t, c, heads, d]() {
        auto g = out.grad();
        auto pv2 = probs.values();
        auto vv2 = v.values();
        std::vector<double> gp, gv;
        if (probs.requires_grad()) gp.assign(pv2.size(), 0.0);
        if (v.requires_grad()) gv.assign(vv2.size(), 0.0);
        for (int bi = 0; bi < b; ++bi) {
            for (int h = 0; h < heads; ++h) {
                const std::size_t poff = (static_cast<std::size_t>(bi) * heads + h) * t * t;
                const std::size_t off = static_cast<std::size_t>(bi) * t * c + static_cast<std::size_t>(h) * d;
                if (probs.requires_grad()) {
                    gemm(false, true, t, t, d, 1.0, g.data() + off, c, vv2.data() + off, c, 0.0, gp.data() + poff, t);
                }
                if (v.requires_grad()) {
                    gemm(true, false, t, d, t, 1.0, pv2.data() + poff, t, g.data() + off, c, 0.0, gv.data() + off, c);
                }
            }
        }
        if (probs.requires_grad()) probs.accumulate_grad(gp);
        if (v.requires_grad()) v.accumulate_grad(gv);
    });
    return out;
}

Tensor add_relative_bias(const Tensor& scores, const Tensor& table, int window) {
    if (scores.rank() != 4) throw DimensionError("add_relative_bias: scores must be [B,h,T,T]");
    const int b = scores.dim(0);
    const int heads = scores.dim(1);
    const int t = scores.dim(2);
    if (scores.dim(3) != t || t != window * window) {
        throw DimensionError("add_relative_bias: token count must equal window^2");
    }
    const int span = 2 * window - 1;
    if (table.rank() != 2 || table.dim(0) != heads || table.dim(1) != span * span) {
        throw DimensionError("add_relative_bias: table must be [heads,(2*window-1)^2]");
    }
    // relative offset index for every (query, key) token pair
    auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(t) * t);
    for (int i = 0; i < t; ++i) {
        const int r1 = i / window;
        const int c1 = i % window;
        for (int j = 0; j < t; ++j) {
            const int r2 = j / window;
            const int c2 = j % window;
            (*idx)[static_cast<std::size_t>(i) * t + j] = (r1 - r2 + window - 1) * span + (c1 - c2 + window - 1);
        }
    }
    Tensor out = Tensor::zeros(scores.shape());
    auto ov = out.values_mutable();
    auto sv = scores.values();
    auto tv = table.values();
    const std::size_t tt = static_cast<std::size_t>(t) * t;
    for (int bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const double* bias = tv.data() + static_cast<std::size_t>(h) * span * span;
            const std::size_t base = (static_cast<std::size_t>(bi) * heads + h) * tt;
            for (std::size_t p = 0; p < tt; ++p) ov[base + p] = sv[base + p] + bias[(*idx)[p]];
        }
    }
    ensure_finite(out, "add_relative_bias");
    record({&scores, &table}, out, [scores, table, out, b, heads, tt, span, idx]() {
        auto g = out.grad();
        if (scores.requires_grad()) scores.accumulate_grad(g);
        if (table.requires_grad()) {
            std::vector<double> gt(static_cast<std::size_t>(table.numel()), 0.0);
            for (int bi = 0; bi < b; ++bi) {
                for (int h = 0; h < heads; ++h) {
                    double* dst = gt.data() + static_cast<std::size_t>(h) * span * span;
                    const std::size_t base = (static_cast<std::size_t>(bi) * heads + h) * tt;
                    for (std::size_t p = 0; p < tt; ++p) dst[(*idx)[p]] += g[base + p];
                }
            }
            table.accumulate_grad(gt);
        }
    });
    return out;
}

// ---- patch mosaics ----

Tensor mosaic_patches(const Tensor& patches, const std::vector<PatchAnchor>& anchors, int images, int out_h,
                      int out_w) {
    if (patches.rank() != 4 || patches.dim(3) != 1) throw DimensionError("mosaic_patches: patches must be [Np,Hp,Wp,1]");
    if (static_cast<int>(anchors.size()) != patches.dim(0)) {
        throw UsageError("mosaic_patches: anchor count does not match patch count");
    }
    const int hp = patches.dim(1);
    const int wp = patches.dim(2);
    Tensor out = Tensor::zeros({images, out_h, out_w, 1});
    auto ov = out.values_mutable();
    auto pv = patches.values();
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(images) * out_h * out_w, 0);
    for (std::size_t p = 0; p < anchors.size(); ++p) {
        const PatchAnchor& a = anchors[p];
        if (a.image < 0 || a.image >= images || a.row < 0 || a.col < 0 || a.row + hp > out_h || a.col + wp > out_w) {
            throw UsageError("mosaic_patches: anchor outside the output image");
        }
        for (int y = 0; y < hp; ++y) {
            const std::size_t dst = (static_cast<std::size_t>(a.image) * out_h + a.row + y) * out_w + a.col;
            std::memcpy(ov.data() + dst, pv.data() + (p * hp + y) * wp, sizeof(double) * static_cast<std::size_t>(wp));
            for (int x = 0; x < wp; ++x) {
                if (covered[dst + x]++) throw UsageError("mosaic_patches: anchors overlap");
            }
        }
    }
    for (std::uint8_t cv : covered) {
        if (!cv) throw UsageError("mosaic_patches: anchors leave uncovered pixels");
    }
    record({&patches}, out, [patches, out, anchors, hp, wp, out_h, out_w]() {
        auto g = out.grad();
        std::vector<double> gp(static_cast<std::size_t>(patches.numel()));
        for (std::size_t p = 0; p < anchors.size(); ++p) {
            const PatchAnchor& a = anchors[p];
            for (int y = 0; y < hp; ++y) {
                const std::size_t src = (static_cast<std::size_t>(a.image) * out_h + a.row + y) * out_w + a.col;
                std::memcpy(gp.data() + (p * hp + y) * wp, g.data() + src, sizeof(double) * static_cast<std::size_t>(wp));
            }
        }
        patches.accumulate_grad(gp);
    });
    return out;
}

}  // namespace csf::ops
