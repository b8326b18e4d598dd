#pragma once

// Shared helpers and independent reference implementations ("oracles")
// used by the unit and acceptance suites. Everything here is written with
// plain loops, independent of the library's BLAS-backed execution paths.

#include <algorithm>
#include <cmath>
#include <vector>

#include "csformer/rng.hpp"
#include "csformer/tensor.hpp"

namespace testsup {

inline csf::Tensor random_tensor(csf::Rng& rng, csf::Dims shape, double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = false) {
    std::vector<double> data(static_cast<std::size_t>(csf::dims_numel(shape)));
    for (double& v : data) v = rng.uniform(lo, hi);
    return csf::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline double max_abs_diff(const csf::Tensor& a, const csf::Tensor& b) {
    return max_abs_diff(a.values(), b.values());
}

// Direct cross-correlation sum, the reference for conv2d.
// input [H,W,Ci], kernels [Co,kh,kw,Ci], optional bias [Co].
inline std::vector<double> naive_conv2d(std::span<const double> input, int h, int w, int ci,
                                        std::span<const double> kernels, int co, int kh, int kw, int stride, int pad,
                                        const std::vector<double>& bias = {}) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(ho) * wo * co, 0.0);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int f = 0; f < co; ++f) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(f)];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int iy = oy * stride + ky - pad;
                        const int ix = ox * stride + kx - pad;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        for (int c = 0; c < ci; ++c) {
                            acc += input[(static_cast<std::size_t>(iy) * w + ix) * ci + c] *
                                   kernels[((static_cast<std::size_t>(f) * kh + ky) * kw + kx) * ci + c];
                        }
                    }
                out[(static_cast<std::size_t>(oy) * wo + ox) * co + f] = acc;
            }
    return out;
}

// Scalar reference for the a=-0.75, half-pixel-center cubic kernel.
inline double cubic_kernel_ref(double t) {
    const double a = -0.75;
    const double x = std::abs(t);
    if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
}

// 1-D bicubic upsample of `src` by `scale` with edge clamping.
inline std::vector<double> bicubic_1d_ref(const std::vector<double>& src, int scale) {
    const int n = static_cast<int>(src.size());
    std::vector<double> out(static_cast<std::size_t>(n) * scale, 0.0);
    for (int o = 0; o < n * scale; ++o) {
        const double pos = (o + 0.5) / scale - 0.5;
        const int base = static_cast<int>(std::floor(pos));
        double acc = 0.0;
        for (int k = -1; k <= 2; ++k) {
            const int tap = std::clamp(base + k, 0, n - 1);
            acc += src[static_cast<std::size_t>(tap)] * cubic_kernel_ref(pos - (base + k));
        }
        out[static_cast<std::size_t>(o)] = acc;
    }
    return out;
}

// Naive windowed multi-head self-attention with the relative-position bias
// materialized as a full T x T matrix per head. Token window f [T,C];
// wq/wk/wv/wo [C,C] with head h owning columns [h*d,(h+1)*d); table
// [heads*(2P-1)^2].
inline std::vector<double> naive_window_msa(const std::vector<double>& f, int t, int c, int heads, int window,
                                            const std::vector<double>& wq, const std::vector<double>& wk,
                                            const std::vector<double>& wv, const std::vector<double>& wo,
                                            const std::vector<double>& table) {
    const int d = c / heads;
    const int span = 2 * window - 1;
    auto project = [&](const std::vector<double>& m) {
        std::vector<double> r(static_cast<std::size_t>(t) * c, 0.0);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int k = 0; k < c; ++k) acc += f[static_cast<std::size_t>(i) * c + k] * m[static_cast<std::size_t>(k) * c + j];
                r[static_cast<std::size_t>(i) * c + j] = acc;
            }
        return r;
    };
    const std::vector<double> q = project(wq);
    const std::vector<double> k = project(wk);
    const std::vector<double> v = project(wv);

    std::vector<double> heads_out(static_cast<std::size_t>(t) * c, 0.0);
    for (int h = 0; h < heads; ++h) {
        // bias matrix for this head
        std::vector<double> bias(static_cast<std::size_t>(t) * t, 0.0);
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j) {
                const int dr = i / window - j / window + window - 1;
                const int dc = i % window - j % window + window - 1;
                bias[static_cast<std::size_t>(i) * t + j] =
                    table[static_cast<std::size_t>(h) * span * span + dr * span + dc];
            }
        for (int i = 0; i < t; ++i) {
            std::vector<double> row(static_cast<std::size_t>(t), 0.0);
            for (int j = 0; j < t; ++j) {
                double acc = 0.0;
                for (int x = 0; x < d; ++x) {
                    acc += q[static_cast<std::size_t>(i) * c + h * d + x] * k[static_cast<std::size_t>(j) * c + h * d + x];
                }
                row[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(d)) +
                                                   bias[static_cast<std::size_t>(i) * t + j];
            }
            const double mx = *std::max_element(row.begin(), row.end());
            double denom = 0.0;
            for (double& rv : row) {
                rv = std::exp(rv - mx);
                denom += rv;
            }
            for (double& rv : row) rv /= denom;
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int j = 0; j < t; ++j) acc += row[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j) * c + h * d + x];
                heads_out[static_cast<std::size_t>(i) * c + h * d + x] = acc;
            }
        }
    }
    // output projection
    std::vector<double> out(static_cast<std::size_t>(t) * c, 0.0);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int x = 0; x < c; ++x) acc += heads_out[static_cast<std::size_t>(i) * c + x] * wo[static_cast<std::size_t>(x) * c + j];
            out[static_cast<std::size_t>(i) * c + j] = acc;
        }
    return out;
}

}  // namespace testsup
