#include "csformer/rng.hpp"

#include <cmath>
#include <numbers>

namespace csf {

std::int64_t Rng::randint(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw UsageError("randint: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // rejection sampling keeps the distribution exact and the stream portable
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    have_spare_ = true;
    return mag * std::cos(ang);
}

void Rng::fill_normal(std::vector<double>& v, double mean, double stddev) {
    for (double& x : v) x = mean + stddev * normal();
}

Tensor fan_in_normal(Rng& rng, Dims shape, int fan_in, bool requires_grad) {
    if (fan_in <= 0) throw UsageError("fan_in_normal: fan_in must be positive");
    std::vector<double> data(static_cast<std::size_t>(dims_numel(shape)));
    rng.fill_normal(data, 0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor orthogonal_rows(Rng& rng, int rows, int cols, double row_norm, bool requires_grad) {
    if (rows < 1 || cols < rows) throw UsageError("orthogonal_rows: need 1 <= rows <= cols");
    std::vector<std::vector<double>> basis;
    basis.reserve(static_cast<std::size_t>(rows));
    while (static_cast<int>(basis.size()) < rows) {
        std::vector<double> v(static_cast<std::size_t>(cols));
        rng.fill_normal(v, 0.0, 1.0);
        // modified Gram-Schmidt, twice for numerical cleanliness
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                double dot = 0.0;
                for (int i = 0; i < cols; ++i) dot += v[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
                for (int i = 0; i < cols; ++i) v[static_cast<std::size_t>(i)] -= dot * b[static_cast<std::size_t>(i)];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;  // degenerate draw, take the next one
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(rows) * cols);
    for (const auto& b : basis) {
        for (double x : b) data.push_back(x * row_norm);
    }
    return Tensor::from_data({rows, cols}, std::move(data), requires_grad);
}

}  // namespace csf
