#include "fsprompt/tensor.hpp"

#include "fsprompt/error.hpp"
#include "tensor_impl.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>

namespace fsprompt {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::string Shape::str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }

namespace detail {
TensorImpl::TensorImpl(Shape s, std::vector<double> d, bool rg)
    : shape(s), data(std::move(d)), requires_grad(rg), id(g_next_id.fetch_add(1)) {
    if (data.size() != shape.numel())
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape.str());
    if (requires_grad) grad.assign(data.size(), 0.0);
}
}  // namespace detail

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>(Shape{}, std::vector<double>{}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>(shape, std::move(data), requires_grad)) {}

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape.numel(), 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1, 1}, {value}, requires_grad); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const noexcept { return impl_->shape; }
std::span<const double> Tensor::data() const noexcept { return impl_->data; }
std::span<double> Tensor::mutable_data() noexcept { return impl_->data; }

double Tensor::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= cols()) throw ShapeError("index out of range for " + shape().str());
    return impl_->data[r * cols() + c];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar " + shape().str());
    return impl_->data[0];
}

bool Tensor::requires_grad() const noexcept { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (impl_->from_op) throw GraphError("set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = on;
    if (on) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    } else {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

bool Tensor::has_grad() const noexcept { return impl_->requires_grad && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw GraphError("tensor " + shape().str() + " has no gradient slot");
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!has_grad()) throw GraphError("tensor " + shape().str() + " has no gradient slot");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const noexcept { return !impl_->from_op; }
std::uint64_t Tensor::id() const noexcept { return impl_->id; }

Tensor Tensor::detached() const { return Tensor(shape(), impl_->data, false); }
Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), impl_->data, requires_grad); }

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
    if (!(shape() == other.shape())) return false;
    return impl_->data.empty() ||
           std::memcmp(impl_->data.data(), other.impl_->data.data(), impl_->data.size() * sizeof(double)) == 0;
}

}  // namespace fsprompt
