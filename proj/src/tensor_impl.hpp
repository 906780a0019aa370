#pragma once

#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace fsprompt {

namespace detail {

struct TensorImpl {
    TensorImpl(Shape s, std::vector<double> d, bool rg);

    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool from_op = false;
    std::vector<double> grad;
    std::uint64_t id = 0;
};

}  // namespace detail

// Internal access to the impl for the graph machinery.
struct TensorAccess {
    static detail::TensorImpl& impl(const Tensor& t) { return *t.impl_; }
    static Tensor make_op_output(Shape shape, std::vector<double> data, bool tracked) {
        auto impl = std::make_shared<detail::TensorImpl>(shape, std::move(data), false);
        impl->from_op = tracked;
        impl->requires_grad = tracked;
        return Tensor(std::move(impl));
    }
};

}  // namespace fsprompt
