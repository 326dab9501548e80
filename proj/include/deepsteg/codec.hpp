#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/image_io.hpp"
#include "deepsteg/loss.hpp"
#include "deepsteg/metrics.hpp"
#include "deepsteg/network.hpp"

namespace deepsteg {

enum class QuantMode { float_passthrough, quantize_8bit };

inline QuantMode parse_quant_mode(const std::string& s) {
    if (s == "8bit" || s == "quantize-8bit" || s == "quantize_8bit") return QuantMode::quantize_8bit;
    if (s == "float" || s == "float-passthrough" || s == "float_passthrough") return QuantMode::float_passthrough;
    throw ConfigError("unknown quantisation mode '" + s + "' (expected 8bit or float)");
}

inline std::string to_string(QuantMode m) {
    return m == QuantMode::quantize_8bit ? "quantize-8bit" : "float-passthrough";
}

/// How a float container is brought to the file boundary.
struct QuantPolicy {
    QuantMode mode = QuantMode::quantize_8bit;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;
};

/// Clamps, then (in quantize-8bit mode) snaps to round(v * 255) / 255.
template <typename T>
Tensor<T> apply_policy(const Tensor<T>& t, const QuantPolicy& policy) {
    Tensor<T> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = std::clamp(static_cast<double>(t.data()[i]), policy.clamp_lo, policy.clamp_hi);
        if (policy.mode == QuantMode::quantize_8bit) v = std::round(v * 255.0) / 255.0;
        out.data()[i] = static_cast<T>(v);
    }
    return out;
}

/// Cover-vs-container distortion before and after the quantisation policy.
struct EncodeSummary {
    double mse_pre = 0.0;  // float container as produced by the network
    double mse_post = 0.0; // after apply_policy
    double sse_pre = 0.0;  // training-loss convention (sum over pixels and channels)
    double sse_post = 0.0;
    std::vector<std::string> warnings;
};

/// Loads a cover and k secrets, runs the noiseless encoder and writes the container as an
/// 8-bit RGB PNG. Input files are only read.
inline EncodeSummary encode_file(const ModelParams<float>& model, const std::filesystem::path& cover_path,
                                 const std::vector<std::filesystem::path>& secret_paths,
                                 const std::filesystem::path& out_path, const QuantPolicy& policy = {},
                                 ImageTensor* container_out = nullptr) {
    if (secret_paths.size() != model.spec.k)
        throw ShapeError("model hides " + std::to_string(model.spec.k) + " secrets, " +
                         std::to_string(secret_paths.size()) + " secret images given");
    EncodeSummary summary;
    StegoBatch<float> batch;
    batch.cover = load_image(cover_path, &summary.warnings);
    for (const auto& p : secret_paths) batch.secrets.push_back(load_image(p, &summary.warnings));

    const auto container = encode_forward(model, batch);
    const auto shipped = apply_policy(container, policy);
    summary.mse_pre = mse(batch.cover, container);
    summary.mse_post = mse(batch.cover, shipped);
    summary.sse_pre = loss_sse(batch.cover, container);
    summary.sse_post = loss_sse(batch.cover, shipped);
    save_image(shipped, out_path);
    if (container_out) *container_out = container;
    return summary;
}

/// Runs every reveal network on a container and clamps the results to [0, 1].
inline std::vector<ImageTensor> decode_container(const ModelParams<float>& model, const ImageTensor& container) {
    auto decoded = decode_all(model, container);
    for (auto& d : decoded)
        for (auto& v : d.values()) v = std::clamp(v, 0.0f, 1.0f);
    return decoded;
}

/// Decodes a container PNG into `<out_dir>/secret_1.png ... secret_k.png` in encoding order.
inline std::vector<std::filesystem::path> decode_file(const ModelParams<float>& model,
                                                      const std::filesystem::path& container_path,
                                                      const std::filesystem::path& out_dir,
                                                      Diagnostics* diag = nullptr) {
    const auto container = load_image(container_path, diag, 0);
    const Shape& s = container.shape();
    if (s.height != kImageSide || s.width != kImageSide)
        throw ShapeError("container '" + container_path.string() + "' is " + std::to_string(s.width) + "x" +
                         std::to_string(s.height) + ", expected " + std::to_string(kImageSide) + "x" +
                         std::to_string(kImageSide));
    std::filesystem::create_directories(out_dir);
    const auto decoded = decode_container(model, container);
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        auto path = out_dir / ("secret_" + std::to_string(i + 1) + ".png");
        save_image(decoded[i], path);
        written.push_back(std::move(path));
    }
    return written;
}

} // namespace deepsteg
