#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deepsteg/conv.hpp"
#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// Architecture of the encoder (k prep networks + hiding network) and the k reveal networks.
struct NetworkSpec {
    std::size_t k = 1;
    /// Parallel convolutions of one aggregated layer, concatenated in this order.
    std::vector<BranchSpec> branches{{50, 3}, {10, 4}, {5, 5}};
    std::size_t prep_depth = 2;
    std::size_t hiding_depth = 5;
    std::size_t reveal_depth = 5;
    std::size_t image_channels = 3;
    /// Kernel of the linear layer that maps hiding/reveal features to an image.
    std::size_t projection_kernel = 1;

    std::size_t aggregated_channels() const noexcept {
        std::size_t c = 0;
        for (const auto& b : branches) c += b.channels;
        return c;
    }
    std::size_t hiding_input_channels() const noexcept {
        return image_channels + k * aggregated_channels();
    }

    void validate() const {
        if (k == 0) throw ShapeError("NetworkSpec: k must be at least 1");
        if (branches.empty()) throw ShapeError("NetworkSpec: no branches");
        if (prep_depth == 0 || hiding_depth == 0 || reveal_depth == 0)
            throw ShapeError("NetworkSpec: every network needs at least one aggregated layer");
        if (image_channels == 0 || projection_kernel == 0)
            throw ShapeError("NetworkSpec: zero channel count or kernel");
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// A chain of conv layers.
template <typename T>
using SubNet = std::vector<ConvLayer<T>>;

template <typename T>
struct ModelParams {
    NetworkSpec spec;
    std::vector<SubNet<T>> prep;
    SubNet<T> hiding;
    std::vector<SubNet<T>> reveal;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

namespace detail {

template <typename T>
SubNet<T> make_subnet(const NetworkSpec& spec, std::size_t in_channels, std::size_t depth,
                      bool projection) {
    SubNet<T> net;
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < depth; ++i) {
        net.push_back(make_conv_layer<T>(c, spec.branches, Activation::relu));
        c = spec.aggregated_channels();
    }
    if (projection) {
        const BranchSpec proj{spec.image_channels, spec.projection_kernel};
        net.push_back(make_conv_layer<T>(c, std::span<const BranchSpec>(&proj, 1), Activation::linear));
    }
    return net;
}

} // namespace detail

/// Zero-valued parameters with the shapes implied by `spec`.
template <typename T>
ModelParams<T> make_model(const NetworkSpec& spec) {
    spec.validate();
    ModelParams<T> m;
    m.spec = spec;
    for (std::size_t i = 0; i < spec.k; ++i)
        m.prep.push_back(detail::make_subnet<T>(spec, spec.image_channels, spec.prep_depth, false));
    m.hiding = detail::make_subnet<T>(spec, spec.hiding_input_channels(), spec.hiding_depth, true);
    for (std::size_t i = 0; i < spec.k; ++i)
        m.reveal.push_back(detail::make_subnet<T>(spec, spec.image_channels, spec.reveal_depth, true));
    return m;
}

/// Named view of one parameter tensor.
template <typename T>
struct ParamView {
    std::string name;
    std::vector<std::size_t> dims;
    std::span<T> values;
};

template <typename T, typename Net>
void append_views(Net& net, const std::string& prefix, std::vector<ParamView<T>>& out) {
    std::size_t agg = 0;
    for (auto& layer : net) {
        const bool proj = layer.activation == Activation::linear;
        const std::string lname = prefix + "." + (proj ? std::string("proj") : "agg" + std::to_string(++agg));
        for (auto& br : layer.branches) {
            const std::string k = std::to_string(br.kernel);
            const std::string bname = lname + ".conv" + k + "x" + k;
            out.push_back({bname + ".weight", {br.kernel, br.kernel, br.in_channels, br.out_channels},
                           std::span<T>(br.weight)});
            out.push_back({bname + ".bias", {br.out_channels}, std::span<T>(br.bias)});
        }
    }
}

/// Every parameter tensor in a fixed order: prep 0..k-1, hiding, reveal 0..k-1.
template <typename T>
std::vector<ParamView<T>> param_views(ModelParams<T>& m) {
    std::vector<ParamView<T>> out;
    for (std::size_t i = 0; i < m.prep.size(); ++i) append_views<T>(m.prep[i], "prep." + std::to_string(i), out);
    append_views<T>(m.hiding, "hiding", out);
    for (std::size_t i = 0; i < m.reveal.size(); ++i)
        append_views<T>(m.reveal[i], "reveal." + std::to_string(i), out);
    return out;
}

template <typename T>
std::vector<ParamView<const T>> param_views(const ModelParams<T>& m) {
    auto views = param_views(const_cast<ModelParams<T>&>(m));
    std::vector<ParamView<const T>> out;
    out.reserve(views.size());
    for (auto& v : views) out.push_back({std::move(v.name), std::move(v.dims), v.values});
    return out;
}

template <typename T>
std::size_t parameter_count(const ModelParams<T>& m) {
    std::size_t n = 0;
    for (const auto& v : param_views(m)) n += v.values.size();
    return n;
}

/// He-style uniform initialisation: weights ~ U(-b, b) with b = sqrt(6 / fan_in), biases zero.
template <typename T>
ModelParams<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
    auto m = make_model<T>(spec);
    std::mt19937_64 rng(seed);
    for (auto& v : param_views(m)) {
        if (v.dims.size() != 4) continue;
        const double fan_in = static_cast<double>(v.dims[0] * v.dims[1] * v.dims[2]);
        std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
        for (auto& w : v.values) w = static_cast<T>(dist(rng));
    }
    return m;
}

template <typename To, typename From>
ModelParams<To> model_cast(const ModelParams<From>& m) {
    auto out = make_model<To>(m.spec);
    auto src = param_views(m);
    auto dst = param_views(out);
    for (std::size_t i = 0; i < src.size(); ++i)
        std::transform(src[i].values.begin(), src[i].values.end(), dst[i].values.begin(),
                       [](From v) { return static_cast<To>(v); });
    return out;
}

/// Activations kept for back-propagation: [0] is the input, [i + 1] the output of layer i.
template <typename T>
struct NetTrace {
    std::vector<Tensor<T>> activations;

    const Tensor<T>& output() const { return activations.back(); }
};

template <typename T>
Tensor<T> run_net(const SubNet<T>& net, Tensor<T> input, NetTrace<T>* trace = nullptr) {
    if (trace) {
        trace->activations.clear();
        trace->activations.push_back(std::move(input));
        for (const auto& layer : net)
            trace->activations.push_back(conv_forward(layer, trace->activations.back()));
        return trace->activations.back();
    }
    for (const auto& layer : net) input = conv_forward(layer, input);
    return input;
}

/// Back-propagates `d_output` through a traced network. Returns the input gradient when
/// requested; parameter gradients are accumulated into `grads` when it is non-null.
template <typename T>
Tensor<T> backprop_net(const SubNet<T>& net, const NetTrace<T>& trace, Tensor<T> d_output,
                       SubNet<T>* grads, bool need_input_grad) {
    for (std::size_t i = net.size(); i-- > 0;) {
        const bool need = need_input_grad || i > 0;
        if (!need && !grads) break;
        d_output = conv_backward(net[i], trace.activations[i], trace.activations[i + 1], d_output,
                                 grads ? &(*grads)[i] : nullptr, need);
        if (!need) break;
    }
    return need_input_grad ? d_output : Tensor<T>();
}

namespace detail {

template <typename T>
void require_image_batch(const Tensor<T>& t, std::size_t channels, const char* what) {
    const Shape& s = t.shape();
    if (s.batch == 0 || s.height == 0 || s.width == 0 || s.channels != channels)
        throw ShapeError(std::string(what) + ": expected batch x H x W x " + std::to_string(channels) +
                         ", got " + to_string(s));
}

} // namespace detail

/// Prep network: secret image -> aggregated feature map (same spatial size).
template <typename T>
Tensor<T> prep_forward(const SubNet<T>& prep, const Tensor<T>& secret, NetTrace<T>* trace = nullptr) {
    if (prep.empty()) throw ShapeError("prep_forward: empty network");
    detail::require_image_batch(secret, prep.front().in_channels(), "prep_forward");
    return run_net(prep, secret, trace);
}

template <typename T>
struct EncodeTrace {
    std::vector<NetTrace<T>> prep;
    NetTrace<T> hiding;

    const Tensor<T>& container() const { return hiding.output(); }
};

/// Encoder: prep every secret, concatenate [cover | prep_1 | ... | prep_k], run the hiding
/// network. The container has the cover's shape.
template <typename T>
Tensor<T> encode_forward(const ModelParams<T>& model, const StegoBatch<T>& batch,
                         EncodeTrace<T>* trace = nullptr) {
    if (batch.k() != model.spec.k)
        throw ShapeError("encode_forward: model hides " + std::to_string(model.spec.k) +
                         " secrets, batch carries " + std::to_string(batch.k()));
    batch.validate();
    detail::require_image_batch(batch.cover, model.spec.image_channels, "encode_forward");

    std::vector<Tensor<T>> features;
    features.reserve(model.spec.k);
    if (trace) trace->prep.assign(model.spec.k, {});
    for (std::size_t i = 0; i < model.spec.k; ++i)
        features.push_back(prep_forward(model.prep[i], batch.secrets[i], trace ? &trace->prep[i] : nullptr));

    std::vector<const Tensor<T>*> parts{&batch.cover};
    for (const auto& f : features) parts.push_back(&f);
    auto hidden_in = concat_channels<T>(parts);
    return run_net(model.hiding, std::move(hidden_in), trace ? &trace->hiding : nullptr);
}

/// One reveal network: container -> decoded secret.
template <typename T>
Tensor<T> reveal_forward(const SubNet<T>& reveal, const Tensor<T>& container,
                         NetTrace<T>* trace = nullptr) {
    if (reveal.empty()) throw ShapeError("reveal_forward: empty network");
    detail::require_image_batch(container, reveal.front().in_channels(), "reveal_forward");
    return run_net(reveal, container, trace);
}

/// Runs reveal network i on the container for every i, in encoding order.
template <typename T>
std::vector<Tensor<T>> decode_all(const ModelParams<T>& model, const Tensor<T>& container) {
    std::vector<Tensor<T>> out;
    out.reserve(model.reveal.size());
    for (const auto& r : model.reveal) out.push_back(reveal_forward(r, container));
    return out;
}

} // namespace deepsteg
