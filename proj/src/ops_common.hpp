#pragma once

#include <cblas.h>

#include <functional>
#include <initializer_list>

#include "csformer/autodiff.hpp"
#include "csformer/tensor.hpp"

namespace csf::ops::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, lda, b, ldb, beta, c, ldc);
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

// Marks `out` differentiable and records the backward closure when a tape
// is active and at least one input participates in differentiation.
inline void record(std::initializer_list<const Tensor*> inputs, Tensor& out, std::function<void()> backward_fn) {
    Tape* tape = Tape::active();
    if (!tape || !any_requires_grad(inputs)) return;
    out.set_requires_grad(true);
    tape->record(std::move(backward_fn));
}

}  // namespace csf::ops::detail
