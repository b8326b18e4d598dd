#include "csformer/tensor.hpp"

#include <cmath>
#include <sstream>

namespace csf {

std::string dims_to_string(const Dims& d) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (i) os << "x";
        os << d[i];
    }
    os << "]";
    return os.str();
}

std::int64_t dims_numel(const Dims& d) {
    std::int64_t n = 1;
    for (int e : d) n *= e;
    return n;
}

static std::shared_ptr<detail::Node> make_node(Dims shape, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive, got " + dims_to_string(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return n;
}

Tensor Tensor::zeros(Dims shape, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    n->value.assign(static_cast<std::size_t>(dims_numel(n->shape)), 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::full(Dims shape, double v, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    n->value.assign(static_cast<std::size_t>(dims_numel(n->shape)), v);
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Dims shape, std::vector<double> data, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    if (static_cast<std::int64_t>(data.size()) != dims_numel(n->shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             dims_to_string(n->shape));
    }
    n->value = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const Dims& Tensor::shape() const {
    if (!node_) throw UsageError("shape() on undefined tensor");
    return node_->shape;
}

int Tensor::dim(int i) const {
    const Dims& s = shape();
    if (i < 0) i += static_cast<int>(s.size());
    if (i < 0 || i >= static_cast<int>(s.size())) throw DimensionError("dim index out of range");
    return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }

std::span<const double> Tensor::values() const {
    if (!node_) throw UsageError("values() on undefined tensor");
    return node_->value;
}

std::span<double> Tensor::values_mutable() {
    if (!node_) throw UsageError("values_mutable() on undefined tensor");
    return node_->value;
}

double Tensor::scalar_value() const {
    if (numel() != 1) throw UsageError("scalar_value() on tensor of shape " + dims_to_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool b) {
    if (!node_) throw UsageError("set_requires_grad() on undefined tensor");
    node_->requires_grad = b;
}

std::span<const double> Tensor::grad() const {
    if (!node_) throw UsageError("grad() on undefined tensor");
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (!node_) throw UsageError("zero_grad() on undefined tensor");
    node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) const {
    if (!node_) throw UsageError("accumulate_grad() on undefined tensor");
    if (g.size() != node_->value.size()) throw DimensionError("gradient size mismatch");
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    double* dst = node_->grad.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void ensure_finite(std::span<const double> v, const char* op_name) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(op_name) + ": non-finite value at flat index " + std::to_string(i));
        }
    }
}

void ensure_finite(const Tensor& t, const char* op_name) { ensure_finite(t.values(), op_name); }

}  // namespace csf
