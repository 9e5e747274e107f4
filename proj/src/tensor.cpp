#include "pfadseg/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pfadseg/errors.hpp"

namespace pfadseg {

std::string Shape::str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw InvalidArgument("negative tensor extent " + shape.str());
    }
}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(shape, Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Buffer values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape.size()) {
        throw InvalidArgument("tensor storage size " + std::to_string(data_.size()) +
                              " does not match shape " + shape.str());
    }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.size() != data_.size()) {
        throw InvalidArgument("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

Tensor Tensor::batch_item(int n) const {
    if (n < 0 || n >= shape_.n) throw InvalidArgument("batch index out of range");
    const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
    Buffer v(data_.begin() + static_cast<std::ptrdiff_t>(n * per),
                          data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
    return Tensor({1, shape_.c, shape_.h, shape_.w}, std::move(v));
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_batch(std::span<const Tensor> items) {
    if (items.empty()) throw InvalidArgument("stack_batch: no items");
    const Shape s = items.front().shape();
    Buffer out;
    out.reserve(s.size() * items.size());
    for (const auto& t : items) {
        if (t.shape() != s || s.n != 1) {
            throw InvalidArgument("stack_batch: mismatched item " + t.shape().str());
        }
        out.insert(out.end(), t.storage().begin(), t.storage().end());
    }
    return Tensor({static_cast<int>(items.size()), s.c, s.h, s.w}, std::move(out));
}

}  // namespace pfadseg
