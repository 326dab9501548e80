#pragma once

// Slow reference implementations used as independent oracles.

#include <cstddef>
#include <cstdint>
#include <random>

#include "deepsteg/conv.hpp"
#include "deepsteg/network.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg::support {

/// Direct nested-loop multi-branch convolution, accumulated in long double.
template <typename T>
Tensor<T> naive_conv(const ConvLayer<T>& layer, const Tensor<T>& in) {
    const Shape s = in.shape();
    Tensor<T> out(Shape{s.batch, s.height, s.width, layer.out_channels()});
    const auto H = static_cast<std::ptrdiff_t>(s.height), W = static_cast<std::ptrdiff_t>(s.width);
    for (std::size_t n = 0; n < s.batch; ++n) {
        std::size_t c0 = 0;
        for (const auto& br : layer.branches) {
            const auto K = static_cast<std::ptrdiff_t>(br.kernel);
            const auto pb = static_cast<std::ptrdiff_t>(pad_before(br.kernel));
            for (std::ptrdiff_t y = 0; y < H; ++y)
                for (std::ptrdiff_t x = 0; x < W; ++x)
                    for (std::size_t co = 0; co < br.out_channels; ++co) {
                        long double acc = br.bias[co];
                        for (std::ptrdiff_t ky = 0; ky < K; ++ky)
                            for (std::ptrdiff_t kx = 0; kx < K; ++kx) {
                                const auto iy = y + ky - pb, ix = x + kx - pb;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                for (std::size_t ci = 0; ci < br.in_channels; ++ci)
                                    acc += static_cast<long double>(
                                               br.weight[((ky * K + kx) * br.in_channels + ci) * br.out_channels + co]) *
                                           in(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci);
                            }
                        if (layer.activation == Activation::relu && acc < 0) acc = 0;
                        out(n, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c0 + co) =
                            static_cast<T>(acc);
                    }
            c0 += br.out_channels;
        }
    }
    return out;
}

/// Loops the naive convolution through a subnetwork.
template <typename T>
Tensor<T> naive_net(const SubNet<T>& net, Tensor<T> x) {
    for (const auto& layer : net) x = naive_conv(layer, x);
    return x;
}

/// Uniform random tensor in [lo, hi).
template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(s);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
    return t;
}

/// Fills every weight and bias of a layer with uniform values in [-scale, scale).
template <typename T>
void randomize(ConvLayer<T>& layer, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (auto& br : layer.branches) {
        for (auto& w : br.weight) w = static_cast<T>(d(rng));
        for (auto& b : br.bias) b = static_cast<T>(d(rng));
    }
}

} // namespace deepsteg::support
