#include "csformer/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace csf {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss tensor");
    }
    const double one = 1.0;
    loss.accumulate_grad(std::span<const double>(&one, 1));
    for (std::size_t i = entries_.size(); i-- > 0;) {
        entries_[i]();
        entries_[i] = nullptr;  // drop captured buffers as soon as possible
    }
    entries_.clear();
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double step) {
    // Analytic gradients from one taped pass.
    std::vector<std::vector<double>> analytic;
    {
        for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
        analytic.reserve(params.size());
        for (const Tensor& p : params) {
            auto g = p.grad();
            analytic.emplace_back(g.begin(), g.end());
        }
    }

    auto eval = [&]() -> double { return f().scalar_value(); };

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto vals = p.values_mutable();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double fp = eval();
            vals[i] = saved - step;
            const double fm = eval();
            vals[i] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double err = std::abs(analytic[pi][i] - numeric) / std::max(1e-8, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace csf
