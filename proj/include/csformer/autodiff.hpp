#pragma once

#include <functional>
#include <vector>

#include "csformer/tensor.hpp"

namespace csf {

// Reverse-mode tape. One tape is built per forward pass; backward() replays
// the recorded primitives in exact reverse execution order. A value consumed
// by k ops receives the sum of k gradient contributions because every
// backward closure accumulates.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. Closures are
    // released as soon as they have run so intermediate buffers die early.
    void backward(const Tensor& loss);

    std::size_t num_ops() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    friend class TapeScope;
    std::vector<std::function<void()>> entries_;
};

// RAII activation of a tape. Ops record onto the innermost active tape;
// with no active tape every op is a plain (eval) computation.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Max over all coordinates of all params of
//   |analytic - central_difference| / max(1e-8, |central_difference|).
//
// `f` must be a deterministic scalar function of the current parameter
// values (state it touches must be restored by the caller's closure).
// Analytic gradients are taken from one taped evaluation; the central
// differences perturb parameter values in place.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double step);

}  // namespace csf
