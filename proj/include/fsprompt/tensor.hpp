#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsprompt {

// Every tensor in this library is a row-major matrix. Vectors are 1 x n rows
// and scalars are 1 x 1. Zero-row matrices are allowed (empty prompt sets).
struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t numel() const noexcept { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

namespace detail {
struct TensorImpl;
}

// Shared handle to a dense matrix of doubles with an optional gradient slot.
// Copies alias the same storage; graph identity is the storage identity.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                            bool requires_grad = false);

    const Shape& shape() const noexcept;
    std::size_t rows() const noexcept { return shape().rows; }
    std::size_t cols() const noexcept { return shape().cols; }
    std::size_t numel() const noexcept { return shape().numel(); }

    std::span<const double> data() const noexcept;
    // Writable view; intended for leaves (parameters, inputs) only.
    std::span<double> mutable_data() noexcept;

    double at(std::size_t r, std::size_t c) const;
    double item() const;

    bool requires_grad() const noexcept;
    void set_requires_grad(bool on);

    bool has_grad() const noexcept;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Graph bookkeeping: a leaf is any tensor not produced by a recorded op.
    bool is_leaf() const noexcept;
    std::uint64_t id() const noexcept;

    // A fresh leaf holding a copy of the values, without gradient tracking.
    Tensor detached() const;
    Tensor clone(bool requires_grad) const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    bool bitwise_equal(const Tensor& other) const noexcept;

private:
    friend class Graph;
    friend struct TensorAccess;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
    std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace fsprompt
