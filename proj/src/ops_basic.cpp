#include <algorithm>
#include <cmath>
#include <numbers>

#include "csformer/ops.hpp"
#include "ops_common.hpp"

namespace csf::ops {

using detail::record;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + dims_to_string(a.shape()) + " vs " +
                             dims_to_string(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    auto o = out.values_mutable();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    ensure_finite(out, "add");
    record({&a, &b}, out, [a, b, out]() {
        auto g = out.grad();
        if (a.requires_grad()) a.accumulate_grad(g);
        if (b.requires_grad()) b.accumulate_grad(g);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    auto o = out.values_mutable();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    ensure_finite(out, "sub");
    record({&a, &b}, out, [a, b, out]() {
        auto g = out.grad();
        if (a.requires_grad()) a.accumulate_grad(g);
        if (b.requires_grad()) {
            std::vector<double> neg(g.begin(), g.end());
            for (double& v : neg) v = -v;
            b.accumulate_grad(neg);
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    auto o = out.values_mutable();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    ensure_finite(out, "mul");
    record({&a, &b}, out, [a, b, out]() {
        auto g = out.grad();
        auto av2 = a.values();
        auto bv2 = b.values();
        if (a.requires_grad()) {
            std::vector<double> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv2[i];
            a.accumulate_grad(ga);
        }
        if (b.requires_grad()) {
            std::vector<double> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av2[i];
            b.accumulate_grad(gb);
        }
    });
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * c;
    ensure_finite(out, "scale");
    record({&x}, out, [x, out, c]() {
        auto g = out.grad();
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * c;
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != x.dim(-1)) {
        throw DimensionError("add_channel_bias: bias " + dims_to_string(bias.shape()) + " does not match channels of " +
                             dims_to_string(x.shape()));
    }
    const std::size_t c = static_cast<std::size_t>(bias.dim(0));
    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + bv[i % c];
    ensure_finite(out, "add_channel_bias");
    record({&x, &bias}, out, [x, bias, out, c]() {
        auto g = out.grad();
        if (x.requires_grad()) x.accumulate_grad(g);
        if (bias.requires_grad()) {
            std::vector<double> gb(c, 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
            bias.accumulate_grad(gb);
        }
    });
    return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank()) throw DimensionError("concat_last: rank mismatch");
    for (int i = 0; i + 1 < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i)) {
            throw DimensionError("concat_last: leading shape mismatch " + dims_to_string(a.shape()) + " vs " +
                                 dims_to_string(b.shape()));
        }
    }
    const std::size_t ca = static_cast<std::size_t>(a.dim(-1));
    const std::size_t cb = static_cast<std::size_t>(b.dim(-1));
    Dims out_shape = a.shape();
    out_shape.back() = static_cast<int>(ca + cb);
    Tensor out = Tensor::zeros(out_shape);
    auto o = out.values_mutable();
    auto av = a.values();
    auto bv = b.values();
    const std::size_t rows = av.size() / ca;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * ca, ca, o.data() + r * (ca + cb));
        std::copy_n(bv.data() + r * cb, cb, o.data() + r * (ca + cb) + ca);
    }
    record({&a, &b}, out, [a, b, out, ca, cb, rows]() {
        auto g = out.grad();
        if (a.requires_grad()) {
            std::vector<double> ga(rows * ca);
            for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.data() + r * (ca + cb), ca, ga.data() + r * ca);
            a.accumulate_grad(ga);
        }
        if (b.requires_grad()) {
            std::vector<double> gb(rows * cb);
            for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.data() + r * (ca + cb) + ca, cb, gb.data() + r * cb);
            b.accumulate_grad(gb);
        }
    });
    return out;
}

Tensor reshape(const Tensor& x, Dims new_shape) {
    if (dims_numel(new_shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + dims_to_string(x.shape()) + " as " + dims_to_string(new_shape));
    }
    auto xv = x.values();
    Tensor out = Tensor::from_data(std::move(new_shape), std::vector<double>(xv.begin(), xv.end()));
    record({&x}, out, [x, out]() { x.accumulate_grad(out.grad()); });
    return out;
}

// ---- activations ----

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] >= 0.0 ? xv[i] : negative_slope * xv[i];
    ensure_finite(out, "leaky_relu");
    record({&x}, out, [x, out, negative_slope]() {
        auto g = out.grad();
        auto xv2 = x.values();
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (xv2[i] >= 0.0 ? 1.0 : negative_slope);
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
    ensure_finite(out, "gelu");
    record({&x}, out, [x, out]() {
        static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        auto g = out.grad();
        auto xv2 = x.values();
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv2[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            gx[i] = g[i] * (cdf + v * pdf);
        }
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor tanh(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(xv[i]);
    ensure_finite(out, "tanh");
    record({&x}, out, [x, out]() {
        auto g = out.grad();
        auto ov = out.values();
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - ov[i] * ov[i]);
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range");
    const std::size_t n = static_cast<std::size_t>(x.dim(axis));
    std::size_t inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.dim(i));
    const std::size_t outer = static_cast<std::size_t>(x.numel()) / (n * inner);

    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
            const std::size_t base = a * n * inner + b;
            double mx = xv[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(xv[base + i * inner] - mx);
                o[base + i * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t i = 0; i < n; ++i) o[base + i * inner] *= inv;
        }
    }
    ensure_finite(out, "softmax");
    record({&x}, out, [x, out, n, inner, outer]() {
        auto g = out.grad();
        auto ov = out.values();
        std::vector<double> gx(g.size());
        for (std::size_t a = 0; a < outer; ++a) {
            for (std::size_t b = 0; b < inner; ++b) {
                const std::size_t base = a * n * inner + b;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * ov[base + i * inner];
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = base + i * inner;
                    gx[k] = ov[k] * (g[k] - dot);
                }
            }
        }
        x.accumulate_grad(gx);
    });
    return out;
}

// ---- normalization ----

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int c = x.dim(-1);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
        throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(c) + "]");
    }
    const std::size_t cn = static_cast<std::size_t>(c);
    const std::size_t rows = static_cast<std::size_t>(x.numel()) / cn;

    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    // normalized values and inverse stddev are reused by the backward pass
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cn;
        double mean = 0.0;
        for (std::size_t i = 0; i < cn; ++i) mean += row[i];
        mean /= static_cast<double>(cn);
        double var = 0.0;
        for (std::size_t i = 0; i < cn; ++i) {
            const double d = row[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cn);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (std::size_t i = 0; i < cn; ++i) {
            const double xh = (row[i] - mean) * istd;
            (*xhat)[r * cn + i] = xh;
            o[r * cn + i] = gv[i] * xh + bv[i];
        }
    }
    ensure_finite(out, "layer_norm");
    record({&x, &gamma, &beta}, out, [x, gamma, beta, out, xhat, inv_std, rows, cn]() {
        auto g = out.grad();
        auto gv2 = gamma.values();
        if (gamma.requires_grad()) {
            std::vector<double> gg(cn, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < cn; ++i) gg[i] += g[r * cn + i] * (*xhat)[r * cn + i];
            gamma.accumulate_grad(gg);
        }
        if (beta.requires_grad()) {
            std::vector<double> gb(cn, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < cn; ++i) gb[i] += g[r * cn + i];
            beta.accumulate_grad(gb);
        }
        if (x.requires_grad()) {
            std::vector<double> gx(g.size());
            for (std::size_t r = 0; r < rows; ++r) {
                double sum_dy = 0.0;
                double sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < cn; ++i) {
                    const double dy = g[r * cn + i] * gv2[i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * (*xhat)[r * cn + i];
                }
                const double m1 = sum_dy / static_cast<double>(cn);
                const double m2 = sum_dy_xhat / static_cast<double>(cn);
                for (std::size_t i = 0; i < cn; ++i) {
                    const double dy = g[r * cn + i] * gv2[i];
                    gx[r * cn + i] = (*inv_std)[r] * (dy - m1 - (*xhat)[r * cn + i] * m2);
                }
            }
            x.accumulate_grad(gx);
        }
    });
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  bool track_stats, double momentum, double eps) {
    if (x.rank() != 3 && x.rank() != 4) throw DimensionError("batch_norm: expected [H,W,C] or [N,H,W,C]");
    const std::size_t cn = static_cast<std::size_t>(x.dim(-1));
    if (gamma.rank() != 1 || gamma.dim(0) != static_cast<int>(cn) || beta.rank() != 1 ||
        beta.dim(0) != static_cast<int>(cn)) {
        throw DimensionError("batch_norm: affine parameters must have shape [" + std::to_string(cn) + "]");
    }
    if (state.running_mean.size() != cn || state.running_var.size() != cn) {
        throw DimensionError("batch_norm: running statistics not initialized for " + std::to_string(cn) + " channels");
    }
    const std::size_t rows = static_cast<std::size_t>(x.numel()) / cn;

    auto mean = std::make_shared<std::vector<double>>(cn, 0.0);
    auto var = std::make_shared<std::vector<double>>(cn, 0.0);
    auto xv = x.values();
    if (mode == Mode::kTrain) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < cn; ++i) (*mean)[i] += xv[r * cn + i];
        for (std::size_t i = 0; i < cn; ++i) (*mean)[i] /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < cn; ++i) {
                const double d = xv[r * cn + i] - (*mean)[i];
                (*var)[i] += d * d;
            }
        for (std::size_t i = 0; i < cn; ++i) (*var)[i] /= static_cast<double>(rows);
        if (track_stats) {
            const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
            for (std::size_t i = 0; i < cn; ++i) {
                state.running_mean[i] = (1.0 - momentum) * state.running_mean[i] + momentum * (*mean)[i];
                state.running_var[i] = (1.0 - momentum) * state.running_var[i] + momentum * (*var)[i] * unbias;
            }
        }
    } else {
        *mean = state.running_mean;
        *var = state.running_var;
    }

    Tensor out = Tensor::zeros(x.shape());
    auto o = out.values_mutable();
    auto gv = gamma.values();
    auto bv = beta.values();
    auto inv_std = std::make_shared<std::vector<double>>(cn);
    for (std::size_t i = 0; i < cn; ++i) (*inv_std)[i] = 1.0 / std::sqrt((*var)[i] + eps);
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < cn; ++i) {
            const double xh = (xv[r * cn + i] - (*mean)[i]) * (*inv_std)[i];
            (*xhat)[r * cn + i] = xh;
            o[r * cn + i] = gv[i] * xh + bv[i];
        }
    }
    ensure_finite(out, "batch_norm");

    const bool batch_stats = mode == Mode::kTrain;
    record({&x, &gamma, &beta}, out, [x, gamma, beta, out, xhat, inv_std, rows, cn, batch_stats]() {
        auto g = out.grad();
        auto gv2 = gamma.values();
        std::vector<double> sum_dy(cn, 0.0);
        std::vector<double> sum_dy_xhat(cn, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < cn; ++i) {
                sum_dy[i] += g[r * cn + i];
                sum_dy_xhat[i] += g[r * cn + i] * (*xhat)[r * cn + i];
            }
        }
        if (gamma.requires_grad()) gamma.accumulate_grad(sum_dy_xhat);
        if (beta.requires_grad()) beta.accumulate_grad(sum_dy);
        if (x.requires_grad()) {
            std::vector<double> gx(g.size());
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t i = 0; i < cn; ++i) {
                    const std::size_t k = r * cn + i;
                    if (batch_stats) {
                        gx[k] = gv2[i] * (*inv_std)[i] *
                                (g[k] - sum_dy[i] * inv_rows - (*xhat)[k] * sum_dy_xhat[i] * inv_rows);
                    } else {
                        gx[k] = gv2[i] * (*inv_std)[i] * g[k];
                    }
                }
            }
            x.accumulate_grad(gx);
        }
    });
    return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    ensure_finite(out, "sum");
    record({&x}, out, [x, out]() {
        const double g = out.grad()[0];
        std::vector<double> gx(static_cast<std::size_t>(x.numel()), g);
        x.accumulate_grad(gx);
    });
    return out;
}

Tensor mean_squared_error(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mean_squared_error");
    auto av = a.values();
    auto bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    const double n = static_cast<double>(av.size());
    Tensor out = Tensor::scalar(s / n);
    ensure_finite(out, "mean_squared_error");
    record({&a, &b}, out, [a, b, out, n]() {
        const double g = out.grad()[0];
        auto av2 = a.values();
        auto bv2 = b.values();
        std::vector<double> ga(av2.size());
        for (std::size_t i = 0; i < av2.size(); ++i) ga[i] = g * 2.0 * (av2[i] - bv2[i]) / n;
        if (a.requires_grad()) a.accumulate_grad(ga);
        if (b.requires_grad()) {
            for (double& v : ga) v = -v;
            b.accumulate_grad(ga);
        }
    });
    return out;
}

}  // namespace csf::ops
