#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deepsteg/error.hpp"

namespace deepsteg {

/// Dimensions of a rank-4 NHWC tensor.
struct Shape {
    std::size_t batch = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    constexpr std::size_t size() const noexcept { return batch * height * width * channels; }
    constexpr std::size_t image_size() const noexcept { return height * width * channels; }
    constexpr std::size_t pixels() const noexcept { return batch * height * width; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << s.batch << "x" << s.height << "x" << s.width << "x" << s.channels;
    return os.str();
}

/// Dense batch of images stored batch-major, then row, column, channel.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size())
            throw ShapeError("tensor data holds " + std::to_string(data_.size()) +
                             " values, shape " + to_string(shape_) + " needs " +
                             std::to_string(shape_.size()));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Spans into a temporary would dangle, so rvalues have no views.
    std::span<T> values() & noexcept { return data_; }
    std::span<const T> values() const& noexcept { return data_; }
    std::span<const T> values() && = delete;
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    std::size_t offset(std::size_t n, std::size_t y, std::size_t x, std::size_t c) const noexcept {
        return ((n * shape_.height + y) * shape_.width + x) * shape_.channels + c;
    }

    T& operator()(std::size_t n, std::size_t y, std::size_t x, std::size_t c) noexcept {
        return data_[offset(n, y, x, c)];
    }
    const T& operator()(std::size_t n, std::size_t y, std::size_t x, std::size_t c) const noexcept {
        return data_[offset(n, y, x, c)];
    }

    std::span<T> image(std::size_t n) & noexcept {
        return std::span<T>(data_).subspan(n * shape_.image_size(), shape_.image_size());
    }
    std::span<const T> image(std::size_t n) const& noexcept {
        return std::span<const T>(data_).subspan(n * shape_.image_size(), shape_.image_size());
    }
    std::span<const T> image(std::size_t) && = delete;

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

using ImageTensor = Tensor<float>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> out(t.size());
    std::transform(t.values().begin(), t.values().end(), out.begin(),
                   [](From v) { return static_cast<To>(v); });
    return Tensor<To>(t.shape(), std::move(out));
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                         to_string(b));
}

/// Concatenates tensors with equal batch and spatial dims along the channel axis.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    Shape out_shape = parts.front()->shape();
    out_shape.channels = 0;
    for (const auto* p : parts) {
        const Shape& s = p->shape();
        if (s.batch != out_shape.batch || s.height != out_shape.height ||
            s.width != out_shape.width)
            throw ShapeError("concat_channels: spatial mismatch " + to_string(s));
        out_shape.channels += s.channels;
    }
    Tensor<T> out(out_shape);
    const std::size_t pixels = out_shape.pixels();
    T* dst = out.data();
    for (std::size_t p = 0; p < pixels; ++p) {
        for (const auto* part : parts) {
            const std::size_t c = part->shape().channels;
            const T* src = part->data() + p * c;
            dst = std::copy(src, src + c, dst);
        }
    }
    return out;
}

/// Extracts channels [first, first + count) into a new tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t first, std::size_t count) {
    const Shape& s = t.shape();
    if (first + count > s.channels) throw ShapeError("slice_channels: range out of bounds");
    Tensor<T> out(Shape{s.batch, s.height, s.width, count});
    const std::size_t pixels = s.pixels();
    for (std::size_t p = 0; p < pixels; ++p) {
        const T* src = t.data() + p * s.channels + first;
        std::copy(src, src + count, out.data() + p * count);
    }
    return out;
}

/// Copies image `n` of a batch into a standalone batch-of-one tensor.
template <typename T>
Tensor<T> take_image(const Tensor<T>& t, std::size_t n) {
    Shape s = t.shape();
    s.batch = 1;
    auto img = t.image(n);
    return Tensor<T>(s, std::vector<T>(img.begin(), img.end()));
}

/// Stacks batch-of-one (or larger) tensors with equal image shapes along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ShapeError("stack_batch: no inputs");
    Shape s = parts.front().shape();
    s.batch = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.height != s.height || ps.width != s.width || ps.channels != s.channels)
            throw ShapeError("stack_batch: image shape mismatch " + to_string(ps));
        s.batch += ps.batch;
    }
    std::vector<T> data;
    data.reserve(s.size());
    for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
    return Tensor<T>(s, std::move(data));
}

} // namespace deepsteg
