#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deepsteg/error.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// Side length every training and evaluation image is brought to.
inline constexpr std::size_t kImageSide = 64;

/// Non-fatal notes produced while loading (format conversions and the like).
using Diagnostics = std::vector<std::string>;

/// Interleaved 8-bit RGB raster.
struct Image8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bytes; // height * width * 3

    std::size_t size() const noexcept { return bytes.size(); }
    friend bool operator==(const Image8&, const Image8&) = default;
};

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline cv::Mat read_rgb8(const std::filesystem::path& path, Diagnostics* diag) {
    if (!std::filesystem::is_regular_file(path))
        throw IoError("cannot read image '" + path.string() + "': no such file");
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw IoError("cannot decode image '" + path.string() + "'");

    auto note = [&](const std::string& msg) {
        if (diag) diag->push_back(path.string() + ": " + msg);
    };

    if (raw.depth() == CV_16U) {
        note("16-bit samples reduced to 8 bits");
        raw.convertTo(raw, CV_8U, 1.0 / 257.0);
    } else if (raw.depth() != CV_8U) {
        throw IoError("unsupported sample depth in '" + path.string() + "'");
    }

    cv::Mat rgb;
    switch (raw.channels()) {
    case 1:
        note("grayscale converted to RGB");
        cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
        break;
    case 3:
        cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
        break;
    case 4:
        note("alpha channel dropped");
        cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
        break;
    default:
        throw IoError("unsupported channel count in '" + path.string() + "'");
    }
    return rgb;
}

inline void write_rgb8(const cv::Mat& rgb, const std::filesystem::path& path) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), bgr);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write image '" + path.string() + "': " + e.what());
    }
    if (!ok) throw IoError("cannot write image '" + path.string() + "'");
}

} // namespace detail

/// Bilinear resize with half-pixel centres (the usual image-library convention).
inline ImageTensor resize_bilinear(const ImageTensor& img, std::size_t height, std::size_t width) {
    const Shape& s = img.shape();
    ImageTensor out(Shape{s.batch, height, width, s.channels});
    for (std::size_t n = 0; n < s.batch; ++n) {
        cv::Mat src(static_cast<int>(s.height), static_cast<int>(s.width),
                    CV_32FC(static_cast<int>(s.channels)),
                    const_cast<float*>(img.image(n).data()));
        cv::Mat dst(static_cast<int>(height), static_cast<int>(width),
                    CV_32FC(static_cast<int>(s.channels)), out.image(n).data());
        cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
    }
    return out;
}

/// Loads an 8-bit raster as a 1 x side x side x 3 tensor with values v / 255.
inline ImageTensor load_image(const std::filesystem::path& path, Diagnostics* diag = nullptr,
                              std::size_t side = kImageSide) {
    cv::Mat rgb = detail::read_rgb8(path, diag);
    ImageTensor t(Shape{1, static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols), 3});
    float* dst = t.data();
    for (int y = 0; y < rgb.rows; ++y) {
        const std::uint8_t* row = rgb.ptr<std::uint8_t>(y);
        for (int i = 0; i < rgb.cols * 3; ++i) *dst++ = static_cast<float>(row[i]) / 255.0f;
    }
    if (side != 0 && (t.shape().height != side || t.shape().width != side)) {
        if (diag)
            diag->push_back(path.string() + ": resized from " + std::to_string(rgb.cols) + "x" +
                            std::to_string(rgb.rows));
        t = resize_bilinear(t, side, side);
    }
    return t;
}

/// Clamps to [0,1] and rounds to the nearest of the 256 byte levels.
template <typename T>
Image8 to_image8(const Tensor<T>& t, std::size_t n = 0) {
    const Shape& s = t.shape();
    if (s.channels != 3) throw ShapeError("to_image8: expected 3 channels, got " + to_string(s));
    if (n >= s.batch) throw ShapeError("to_image8: image index out of range");
    Image8 img{s.height, s.width, std::vector<std::uint8_t>(s.image_size())};
    auto src = t.image(n);
    std::transform(src.begin(), src.end(), img.bytes.begin(),
                   [](T v) { return to_byte(static_cast<double>(v)); });
    return img;
}

inline ImageTensor from_image8(const Image8& img) {
    ImageTensor t(Shape{1, img.height, img.width, 3});
    std::transform(img.bytes.begin(), img.bytes.end(), t.data(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return t;
}

inline Image8 load_image8(const std::filesystem::path& path, Diagnostics* diag = nullptr) {
    cv::Mat rgb = detail::read_rgb8(path, diag);
    Image8 img{static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols), {}};
    img.bytes.reserve(img.height * img.width * 3);
    for (int y = 0; y < rgb.rows; ++y) {
        const std::uint8_t* row = rgb.ptr<std::uint8_t>(y);
        img.bytes.insert(img.bytes.end(), row, row + rgb.cols * 3);
    }
    return img;
}

/// Writes an 8-bit RGB PNG (or any format OpenCV infers from the extension).
inline void save_image8(const Image8& img, const std::filesystem::path& path) {
    if (img.bytes.size() != img.height * img.width * 3)
        throw ShapeError("save_image8: byte count does not match dimensions");
    cv::Mat rgb(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3,
                const_cast<std::uint8_t*>(img.bytes.data()));
    detail::write_rgb8(rgb, path);
}

template <typename T>
void save_image(const Tensor<T>& t, const std::filesystem::path& path, std::size_t n = 0) {
    save_image8(to_image8(t, n), path);
}

} // namespace deepsteg
