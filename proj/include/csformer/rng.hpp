#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "csformer/tensor.hpp"

namespace csf {

// Deterministic random stream. Gaussians come from a hand-rolled
// Box-Muller transform so that draws are bit-identical across standard
// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    std::int64_t randint(std::int64_t lo, std::int64_t hi);

    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(std::vector<double>& v, double mean, double stddev);

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Gaussian entries with stddev 1/sqrt(fan_in).
Tensor fan_in_normal(Rng& rng, Dims shape, int fan_in, bool requires_grad = true);

// Rows mutually orthogonal with row norm `row_norm` (Gram-Schmidt on a
// Gaussian draw). rows <= cols required.
Tensor orthogonal_rows(Rng& rng, int rows, int cols, double row_norm, bool requires_grad = true);

}  // namespace csf
