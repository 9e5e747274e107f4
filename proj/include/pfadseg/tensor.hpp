#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace pfadseg {

/// Allocator with a fixed 64-byte alignment. Vectorized reductions peel
/// leading elements until they reach an aligned address, so a buffer's
/// alignment decides the summation order; pinning it keeps results
/// bitwise reproducible from one allocation to the next.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// NCHW extents. Every tensor in the library is four-dimensional; scalars
/// are 1x1x1x1 and weight kernels reuse the layout as (out, in, kh, kw).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense row-major NCHW tensor of doubles with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, const std::vector<double>& values);
    Tensor(Shape shape, Buffer values);

    static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    Buffer& storage() { return data_; }
    const Buffer& storage() const { return data_; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Element (0,0,0,0); convenience for scalar tensors.
    double item() const { return data_.at(0); }

    void fill(double v);
    /// Same storage, new extents. Sizes must agree.
    Tensor reshaped(Shape shape) const;
    /// Copy of batch element `n` as a 1xCxHxW tensor.
    Tensor batch_item(int n) const;
    bool all_finite() const;

private:
    Shape shape_;
    Buffer data_;
};

/// Stacks equally shaped 1xCxHxW tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace pfadseg
