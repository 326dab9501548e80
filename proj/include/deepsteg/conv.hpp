#pragma once

// Multi-branch "same" convolution layers.
//
// A ConvLayer holds one or more branches that all read the same input and whose outputs are
// concatenated along the channel axis. Each branch is a stride-1 cross-correlation with a
// square kernel, padded so that the spatial size is preserved:
//
//     out[y, x, c] = bias[c] + sum_{ky, kx, ci} w[ky, kx, ci, c] * in[y + ky - pb, x + kx - pb, ci]
//
// where pb = (kernel - 1) / 2 zeros are added before and kernel - 1 - pb after each axis, so an
// even kernel pads one more cell after than before.
//
// Evaluation works on a zero-padded copy of each image flattened to rows of Cin values. For a
// padded width Wp, output (y, x) maps to virtual row y * Wp + x, and the input read by kernel
// tap (dy, dx) is the virtual row shifted by a constant offset. Each tap is then one GEMM of a
// contiguous strided view of the padded image against a Cin x Cout weight slice, with no
// im2col buffer. Virtual rows with x >= W are scratch and discarded. ConvPlan describes the
// two exceptions (narrow branch runs, and inputs with very few channels).

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deepsteg/error.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

struct BranchSpec {
    std::size_t channels = 0;
    std::size_t kernel = 0;

    friend bool operator==(const BranchSpec&, const BranchSpec&) = default;
};

constexpr std::size_t pad_before(std::size_t kernel) noexcept { return (kernel - 1) / 2; }
constexpr std::size_t pad_after(std::size_t kernel) noexcept {
    return kernel - 1 - pad_before(kernel);
}

template <typename T>
struct ConvBranch {
    std::size_t kernel = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::vector<T> weight; // [kernel][kernel][in_channels][out_channels]
    std::vector<T> bias;   // [out_channels]

    ConvBranch() = default;
    ConvBranch(std::size_t k, std::size_t cin, std::size_t cout)
        : kernel(k), in_channels(cin), out_channels(cout), weight(k * k * cin * cout, T(0)),
          bias(cout, T(0)) {}

    friend bool operator==(const ConvBranch&, const ConvBranch&) = default;
};

enum class Activation { linear, relu };

template <typename T>
struct ConvLayer {
    std::vector<ConvBranch<T>> branches;
    Activation activation = Activation::relu;

    std::size_t in_channels() const noexcept {
        return branches.empty() ? 0 : branches.front().in_channels;
    }
    std::size_t out_channels() const noexcept {
        std::size_t c = 0;
        for (const auto& b : branches) c += b.out_channels;
        return c;
    }

    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
ConvLayer<T> make_conv_layer(std::size_t in_channels, std::span<const BranchSpec> branches,
                             Activation act) {
    ConvLayer<T> layer;
    layer.activation = act;
    for (const auto& b : branches) {
        if (b.kernel == 0 || b.channels == 0) throw ShapeError("conv branch with zero size");
        layer.branches.emplace_back(b.kernel, in_channels, b.channels);
    }
    return layer;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatView = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatView = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

/// Consecutive branches that all use one kernel tap; their outputs are adjacent columns.
struct TapRun {
    std::size_t first_branch = 0;
    std::size_t branch_count = 0;
    std::size_t col0 = 0;
    std::size_t cols = 0;
};

struct Tap {
    std::ptrdiff_t dy = 0;
    std::ptrdiff_t dx = 0;
    std::vector<TapRun> runs;
};

/// Geometry shared by every image of a forward or backward pass.
struct ConvFrame {
    std::size_t height = 0, width = 0, cin = 0, cout = 0;
    std::size_t pad_lo = 0, pad_hi = 0;
    std::size_t padded_h = 0, padded_w = 0;
    std::size_t rows = 0; // virtual output rows per image
    std::vector<Tap> taps;

    std::size_t tap_base(const Tap& t) const noexcept {
        return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(pad_lo) + t.dy) * padded_w +
               static_cast<std::size_t>(static_cast<std::ptrdiff_t>(pad_lo) + t.dx);
    }
};

template <typename T>
ConvFrame make_frame(const ConvLayer<T>& layer, std::size_t height, std::size_t width) {
    ConvFrame f;
    f.height = height;
    f.width = width;
    f.cin = layer.in_channels();
    f.cout = layer.out_channels();
    for (const auto& b : layer.branches) {
        f.pad_lo = std::max(f.pad_lo, pad_before(b.kernel));
        f.pad_hi = std::max(f.pad_hi, pad_after(b.kernel));
    }
    f.padded_h = height + f.pad_lo + f.pad_hi;
    f.padded_w = width + f.pad_lo + f.pad_hi;
    f.rows = (height - 1) * f.padded_w + width;

    const auto lo = -static_cast<std::ptrdiff_t>(f.pad_lo);
    const auto hi = static_cast<std::ptrdiff_t>(f.pad_hi);
    for (std::ptrdiff_t dy = lo; dy <= hi; ++dy) {
        for (std::ptrdiff_t dx = lo; dx <= hi; ++dx) {
            Tap tap{dy, dx, {}};
            std::size_t col = 0;
            bool open = false;
            for (std::size_t b = 0; b < layer.branches.size(); ++b) {
                const auto k = layer.branches[b].kernel;
                const auto blo = -static_cast<std::ptrdiff_t>(pad_before(k));
                const auto bhi = static_cast<std::ptrdiff_t>(pad_after(k));
                const bool uses = dy >= blo && dy <= bhi && dx >= blo && dx <= bhi;
                const auto cols = layer.branches[b].out_channels;
                if (uses) {
                    if (open) {
                        tap.runs.back().branch_count += 1;
                        tap.runs.back().cols += cols;
                    } else {
                        tap.runs.push_back({b, 1, col, cols});
                    }
                }
                open = uses;
                col += cols;
            }
            if (!tap.runs.empty()) f.taps.push_back(std::move(tap));
        }
    }
    return f;
}

/// Where one (tap, run) weight slice lives inside a packed buffer: a Cin x run.cols block
/// with leading dimension `ld`, starting at `offset`.
struct Piece {
    std::size_t tap = 0, run = 0;
    std::size_t store = 0;
    std::size_t offset = 0, ld = 0;
};

/// Runs narrower than this are grouped into one wide product whose outputs are shifted into
/// place afterwards; a GEMM with a handful of output columns runs far below peak.
inline constexpr std::size_t kNarrowRun = 32;
/// Layers with fewer input channels use an explicit im2col matrix instead of per-tap products.
inline constexpr std::size_t kIm2colChannels = 8;

/// Evaluation strategy for one layer.
///
/// With im2col, store 0 is a (taps * Cin) x Cout matrix, zero where a branch skips a tap.
/// Otherwise each wide run gets its own Cin x cols store, multiplied against a shifted view
/// of the padded input, and the narrow runs share the last store (Cin x narrow_cols). That
/// one is multiplied against the whole padded image and each tap's block of the product is
/// added to the output at the tap's offset.
struct ConvPlan {
    bool im2col = false;
    std::vector<Piece> pieces;
    std::vector<std::size_t> store_sizes;
    std::vector<std::size_t> wide;
    std::vector<std::size_t> narrow;
    std::size_t narrow_cols = 0;
    std::size_t padded_rows = 0;
};

inline ConvPlan make_plan(const ConvFrame& f) {
    ConvPlan plan;
    plan.padded_rows = f.padded_h * f.padded_w;
    plan.im2col = f.cin < kIm2colChannels;
    if (plan.im2col) {
        plan.store_sizes.push_back(f.taps.size() * f.cin * f.cout);
        for (std::size_t t = 0; t < f.taps.size(); ++t)
            for (std::size_t r = 0; r < f.taps[t].runs.size(); ++r)
                plan.pieces.push_back({t, r, 0, t * f.cin * f.cout + f.taps[t].runs[r].col0, f.cout});
        return plan;
    }
    for (std::size_t t = 0; t < f.taps.size(); ++t) {
        for (std::size_t r = 0; r < f.taps[t].runs.size(); ++r) {
            const auto cols = f.taps[t].runs[r].cols;
            if (cols >= kNarrowRun) {
                plan.wide.push_back(plan.pieces.size());
                plan.pieces.push_back({t, r, plan.store_sizes.size(), 0, cols});
                plan.store_sizes.push_back(f.cin * cols);
            } else {
                plan.narrow.push_back(plan.pieces.size());
                plan.pieces.push_back({t, r, 0, plan.narrow_cols, 0});
                plan.narrow_cols += cols;
            }
        }
    }
    if (plan.narrow_cols > 0) {
        const std::size_t store = plan.store_sizes.size();
        for (auto i : plan.narrow) {
            plan.pieces[i].store = store;
            plan.pieces[i].ld = plan.narrow_cols;
        }
        plan.store_sizes.push_back(f.cin * plan.narrow_cols);
    }
    return plan;
}

/// Calls fn(piece, branch, weight offset within the branch, column within the run) for every
/// branch of every piece.
template <typename T, typename Fn>
void for_each_slice(const ConvLayer<T>& layer, const ConvFrame& f, const ConvPlan& plan, Fn&& fn) {
    for (const auto& piece : plan.pieces) {
        const auto& tap = f.taps[piece.tap];
        const auto& run = tap.runs[piece.run];
        std::size_t col = 0;
        for (std::size_t b = run.first_branch; b < run.first_branch + run.branch_count; ++b) {
            const auto& br = layer.branches[b];
            const auto pb = static_cast<std::ptrdiff_t>(pad_before(br.kernel));
            const auto ky = static_cast<std::size_t>(tap.dy + pb);
            const auto kx = static_cast<std::size_t>(tap.dx + pb);
            fn(piece, b, (ky * br.kernel + kx) * br.in_channels * br.out_channels, col);
            col += br.out_channels;
        }
    }
}

template <typename T>
std::vector<std::vector<T>> pack_weights(const ConvLayer<T>& layer, const ConvFrame& f, const ConvPlan& plan) {
    std::vector<std::vector<T>> stores;
    for (auto n : plan.store_sizes) stores.emplace_back(n, T(0));
    for_each_slice(layer, f, plan, [&](const Piece& p, std::size_t b, std::size_t woff, std::size_t col) {
        const auto& br = layer.branches[b];
        const T* src = br.weight.data() + woff;
        T* dst = stores[p.store].data() + p.offset + col;
        for (std::size_t ci = 0; ci < f.cin; ++ci)
            std::copy(src + ci * br.out_channels, src + (ci + 1) * br.out_channels, dst + ci * p.ld);
    });
    return stores;
}

/// Adds packed weight gradients back into branch-shaped storage.
template <typename T>
void scatter_weight_grads(ConvLayer<T>& grads, const ConvFrame& f, const ConvPlan& plan,
                          const std::vector<std::vector<T>>& stores) {
    for_each_slice(grads, f, plan, [&](const Piece& p, std::size_t b, std::size_t woff, std::size_t col) {
        auto& br = grads.branches[b];
        T* dst = br.weight.data() + woff;
        const T* src = stores[p.store].data() + p.offset + col;
        for (std::size_t ci = 0; ci < f.cin; ++ci)
            for (std::size_t co = 0; co < br.out_channels; ++co)
                dst[ci * br.out_channels + co] += src[ci * p.ld + co];
    });
}

template <typename T>
void fill_padded(const ConvFrame& f, std::span<const T> image, std::vector<T>& padded) {
    for (std::size_t y = 0; y < f.height; ++y) {
        const T* src = image.data() + y * f.width * f.cin;
        T* dst = padded.data() + ((y + f.pad_lo) * f.padded_w + f.pad_lo) * f.cin;
        std::copy(src, src + f.width * f.cin, dst);
    }
}

/// cols[r, t * Cin + ci] = padded[r + base(t), ci]
template <typename T>
void fill_im2col(const ConvFrame& f, const std::vector<T>& padded, std::vector<T>& cols) {
    const std::size_t width = f.taps.size() * f.cin;
    for (std::size_t t = 0; t < f.taps.size(); ++t) {
        const T* src = padded.data() + f.tap_base(f.taps[t]) * f.cin;
        T* dst = cols.data() + t * f.cin;
        for (std::size_t r = 0; r < f.rows; ++r)
            std::copy(src + r * f.cin, src + (r + 1) * f.cin, dst + r * width);
    }
}

/// Adjoint of fill_im2col.
template <typename T>
void add_col2im(const ConvFrame& f, const std::vector<T>& cols, std::vector<T>& padded) {
    const std::size_t width = f.taps.size() * f.cin;
    for (std::size_t t = 0; t < f.taps.size(); ++t) {
        T* dst = padded.data() + f.tap_base(f.taps[t]) * f.cin;
        const T* src = cols.data() + t * f.cin;
        for (std::size_t r = 0; r < f.rows; ++r)
            for (std::size_t ci = 0; ci < f.cin; ++ci) dst[r * f.cin + ci] += src[r * width + ci];
    }
}

template <typename T>
ConstMatView<T> cview(const T* p, std::size_t rows, std::size_t cols, std::size_t ld) {
    return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
            Eigen::OuterStride<>(static_cast<Eigen::Index>(ld))};
}

template <typename T>
MatView<T> mview(T* p, std::size_t rows, std::size_t cols, std::size_t ld) {
    return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
            Eigen::OuterStride<>(static_cast<Eigen::Index>(ld))};
}

} // namespace detail

/// Applies a multi-branch layer to a batch; output channels are the branch concatenation.
template <typename T>
Tensor<T> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& input) {
    const Shape& s = input.shape();
    if (s.channels != layer.in_channels())
        throw ShapeError("conv_forward: layer expects " + std::to_string(layer.in_channels()) +
                         " input channels, got " + to_string(s));
    if (s.batch == 0 || s.height == 0 || s.width == 0)
        throw ShapeError("conv_forward: empty input " + to_string(s));

    using detail::cview;
    using detail::mview;
    const auto f = detail::make_frame(layer, s.height, s.width);
    const auto plan = detail::make_plan(f);
    const auto stores = detail::pack_weights(layer, f, plan);
    std::vector<T> bias;
    for (const auto& b : layer.branches) bias.insert(bias.end(), b.bias.begin(), b.bias.end());

    Tensor<T> out(Shape{s.batch, s.height, s.width, f.cout});
    std::vector<T> padded(plan.padded_rows * f.cin, T(0));
    std::vector<T> virt(f.rows * f.cout);
    std::vector<T> cols(plan.im2col ? f.rows * f.taps.size() * f.cin : 0);
    std::vector<T> shifted(plan.narrow_cols ? plan.padded_rows * plan.narrow_cols : 0);

    for (std::size_t n = 0; n < s.batch; ++n) {
        detail::fill_padded<T>(f, input.image(n), padded);
        if (plan.im2col) {
            detail::fill_im2col(f, padded, cols);
            const std::size_t width = f.taps.size() * f.cin;
            mview(virt.data(), f.rows, f.cout, f.cout).noalias() =
                cview(cols.data(), f.rows, width, width) * cview(stores[0].data(), width, f.cout, f.cout);
        } else {
            std::fill(virt.begin(), virt.end(), T(0));
            for (auto i : plan.wide) {
                const auto& p = plan.pieces[i];
                const auto& tap = f.taps[p.tap];
                const auto& run = tap.runs[p.run];
                mview(virt.data() + run.col0, f.rows, run.cols, f.cout).noalias() +=
                    cview(padded.data() + f.tap_base(tap) * f.cin, f.rows, f.cin, f.cin) *
                    cview(stores[p.store].data(), f.cin, run.cols, p.ld);
            }
            if (plan.narrow_cols) {
                mview(shifted.data(), plan.padded_rows, plan.narrow_cols, plan.narrow_cols).noalias() =
                    cview(padded.data(), plan.padded_rows, f.cin, f.cin) *
                    cview(stores.back().data(), f.cin, plan.narrow_cols, plan.narrow_cols);
                for (auto i : plan.narrow) {
                    const auto& p = plan.pieces[i];
                    const auto& tap = f.taps[p.tap];
                    const auto& run = tap.runs[p.run];
                    const T* src = shifted.data() + f.tap_base(tap) * plan.narrow_cols + p.offset;
                    T* dst = virt.data() + run.col0;
                    for (std::size_t r = 0; r < f.rows; ++r)
                        for (std::size_t c = 0; c < run.cols; ++c)
                            dst[r * f.cout + c] += src[r * plan.narrow_cols + c];
                }
            }
        }
        T* dst = out.image(n).data();
        const bool relu = layer.activation == Activation::relu;
        for (std::size_t y = 0; y < f.height; ++y) {
            for (std::size_t x = 0; x < f.width; ++x) {
                const T* src = virt.data() + (y * f.padded_w + x) * f.cout;
                for (std::size_t c = 0; c < f.cout; ++c) {
                    const T v = src[c] + bias[c];
                    *dst++ = relu ? std::max(v, T(0)) : v;
                }
            }
        }
    }
    return out;
}

/// Back-propagates through a layer given its input, its (post-activation) output and the
/// gradient of the loss with respect to that output.
///
/// Weight and bias gradients are accumulated into `grads` when it is non-null. The input
/// gradient is returned when `need_input_grad` is set, otherwise an empty tensor.
template <typename T>
Tensor<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& input, const Tensor<T>& output,
                        const Tensor<T>& d_output, ConvLayer<T>* grads, bool need_input_grad) {
    const Shape& s = input.shape();
    require_same_shape(output.shape(), d_output.shape(), "conv_backward");
    if (output.shape().channels != layer.out_channels() || s.channels != layer.in_channels())
        throw ShapeError("conv_backward: tensors do not match layer");

    using detail::cview;
    using detail::mview;
    const auto f = detail::make_frame(layer, s.height, s.width);
    const auto plan = detail::make_plan(f);
    const auto stores = detail::pack_weights(layer, f, plan);
    const bool relu = layer.activation == Activation::relu;

    std::vector<std::vector<T>> d_stores;
    if (grads)
        for (const auto& st : stores) d_stores.emplace_back(st.size(), T(0));

    Tensor<T> d_input;
    if (need_input_grad) d_input = Tensor<T>(s);

    std::vector<T> padded(plan.padded_rows * f.cin, T(0));
    std::vector<T> d_padded;
    if (need_input_grad) d_padded.assign(padded.size(), T(0));
    std::vector<T> d_virt(f.rows * f.cout, T(0));
    std::vector<T> d_bias(f.cout, T(0));
    const std::size_t width = f.taps.size() * f.cin;
    std::vector<T> cols(plan.im2col ? f.rows * width : 0);
    std::vector<T> d_shifted(plan.narrow_cols ? plan.padded_rows * plan.narrow_cols : 0);

    for (std::size_t n = 0; n < s.batch; ++n) {
        const T* out = output.image(n).data();
        const T* dout = d_output.image(n).data();
        for (std::size_t y = 0; y < f.height; ++y) {
            for (std::size_t x = 0; x < f.width; ++x) {
                T* dst = d_virt.data() + (y * f.padded_w + x) * f.cout;
                for (std::size_t c = 0; c < f.cout; ++c, ++out, ++dout) {
                    const T g = (!relu || *out > T(0)) ? *dout : T(0);
                    dst[c] = g;
                    d_bias[c] += g;
                }
            }
        }
        const auto dv = cview(d_virt.data(), f.rows, f.cout, f.cout);
        if (grads) detail::fill_padded<T>(f, input.image(n), padded);

        if (plan.im2col) {
            if (grads) {
                detail::fill_im2col(f, padded, cols);
                mview(d_stores[0].data(), width, f.cout, f.cout).noalias() +=
                    cview(cols.data(), f.rows, width, width).transpose() * dv;
            }
            if (need_input_grad) {
                mview(cols.data(), f.rows, width, width).noalias() =
                    dv * cview(stores[0].data(), width, f.cout, f.cout).transpose();
                detail::add_col2im(f, cols, d_padded);
            }
        } else {
            for (auto i : plan.wide) {
                const auto& p = plan.pieces[i];
                const auto& tap = f.taps[p.tap];
                const auto& run = tap.runs[p.run];
                const std::size_t base = f.tap_base(tap) * f.cin;
                const auto d = cview(d_virt.data() + run.col0, f.rows, run.cols, f.cout);
                if (grads)
                    mview(d_stores[p.store].data(), f.cin, run.cols, p.ld).noalias() +=
                        cview(padded.data() + base, f.rows, f.cin, f.cin).transpose() * d;
                if (need_input_grad)
                    mview(d_padded.data() + base, f.rows, f.cin, f.cin).noalias() +=
                        d * cview(stores[p.store].data(), f.cin, run.cols, p.ld).transpose();
            }
            if (plan.narrow_cols) {
                const std::size_t nc = plan.narrow_cols;
                std::fill(d_shifted.begin(), d_shifted.end(), T(0));
                for (auto i : plan.narrow) {
                    const auto& p = plan.pieces[i];
                    const auto& tap = f.taps[p.tap];
                    const auto& run = tap.runs[p.run];
                    T* dst = d_shifted.data() + f.tap_base(tap) * nc + p.offset;
                    const T* src = d_virt.data() + run.col0;
                    for (std::size_t r = 0; r < f.rows; ++r)
                        std::copy(src + r * f.cout, src + r * f.cout + run.cols, dst + r * nc);
                }
                const auto ds = cview(d_shifted.data(), plan.padded_rows, nc, nc);
                if (grads)
                    mview(d_stores.back().data(), f.cin, nc, nc).noalias() +=
                        cview(padded.data(), plan.padded_rows, f.cin, f.cin).transpose() * ds;
                if (need_input_grad)
                    mview(d_padded.data(), plan.padded_rows, f.cin, f.cin).noalias() +=
                        ds * cview(stores.back().data(), f.cin, nc, nc).transpose();
            }
        }

        if (need_input_grad) {
            T* dst = d_input.image(n).data();
            for (std::size_t y = 0; y < f.height; ++y) {
                const T* src = d_padded.data() + ((y + f.pad_lo) * f.padded_w + f.pad_lo) * f.cin;
                dst = std::copy(src, src + f.width * f.cin, dst);
            }
            std::fill(d_padded.begin(), d_padded.end(), T(0));
        }
    }

    if (grads) {
        detail::scatter_weight_grads(*grads, f, plan, d_stores);
        std::size_t c = 0;
        for (auto& br : grads->branches)
            for (auto& b : br.bias) b += d_bias[c++];
    }
    return d_input;
}

} // namespace deepsteg
