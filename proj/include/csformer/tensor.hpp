#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csf {

// Extents of one tensor axis. Kept as plain ints; every shape in this
// project is small enough that overflow can only happen in numel(),
// which is computed in 64 bits.
using Dims = std::vector<int>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

std::string dims_to_string(const Dims& d);
std::int64_t dims_numel(const Dims& d);

namespace detail {
struct Node {
    Dims shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, always value.size() once allocated
    bool requires_grad = false;
};
}  // namespace detail

// Dense 64-bit float tensor, row-major. A Tensor is a cheap shared handle;
// op results are frozen after creation (only parameter updates between
// passes mutate values in place).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Dims shape, bool requires_grad = false);
    static Tensor full(Dims shape, double v, bool requires_grad = false);
    static Tensor from_data(Dims shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }

    const Dims& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int i) const;
    std::int64_t numel() const;

    std::span<const double> values() const;
    std::span<double> values_mutable();
    double at(std::int64_t i) const { return values()[static_cast<std::size_t>(i)]; }
    double scalar_value() const;

    bool requires_grad() const;
    void set_requires_grad(bool b);

    // Gradient accumulated by the last backward pass; zeros when the
    // tensor was never touched by it. Gradients live on the shared node,
    // so these are const on the handle.
    std::span<const double> grad() const;
    void zero_grad() const;
    void accumulate_grad(std::span<const double> g) const;

    // Identity of the underlying storage node (used by the tape and the
    // parameter registry).
    const void* node_id() const { return node_.get(); }

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Throws NumericError when any entry of v is NaN or infinite.
void ensure_finite(std::span<const double> v, const char* op_name);
void ensure_finite(const Tensor& t, const char* op_name);

}  // namespace csf
