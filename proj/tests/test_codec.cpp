#include <gtest/gtest.h>

#include <cmath>

#include "deepsteg/codec.hpp"
#include "support/oracle.hpp"
#include "support/synthetic.hpp"

using namespace deepsteg;
using deepsteg::support::random_tensor;
using deepsteg::support::smooth_image;
using deepsteg::support::TempDir;

namespace {

const ModelParams<float>& model_k2() {
    static const auto m = [] {
        NetworkSpec s;
        s.k = 2;
        return init_params<float>(s, 11);
    }();
    return m;
}

struct Files {
    TempDir dir;
    std::filesystem::path cover, s1, s2;
    Files() : cover(dir / "cover.png"), s1(dir / "s1.png"), s2(dir / "s2.png") {
        save_image(smooth_image(1), cover);
        save_image(smooth_image(2), s1);
        save_image(smooth_image(3), s2);
    }
};

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

} // namespace

TEST(QuantPolicy, ParseModes) {
    EXPECT_EQ(parse_quant_mode("8bit"), QuantMode::quantize_8bit);
    EXPECT_EQ(parse_quant_mode("float"), QuantMode::float_passthrough);
    EXPECT_EQ(parse_quant_mode(to_string(QuantMode::quantize_8bit)), QuantMode::quantize_8bit);
    EXPECT_THROW(parse_quant_mode("16bit"), ConfigError);
}

TEST(QuantPolicy, IdempotentAndWithinHalfStep) {
    const auto x = random_tensor<float>({1, 16, 16, 3}, 1, -0.1, 1.1);
    const QuantPolicy q;
    const auto once = apply_policy(x, q);
    EXPECT_EQ(apply_policy(once, q), once);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double clamped = std::clamp(static_cast<double>(x.data()[i]), 0.0, 1.0);
        EXPECT_LE(std::abs(once.data()[i] - clamped), 1.0 / 510.0 + 1e-7);
        EXPECT_NEAR(once.data()[i] * 255.0, std::round(once.data()[i] * 255.0), 1e-4);
    }
    const auto passthrough = apply_policy(x, QuantPolicy{QuantMode::float_passthrough});
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_EQ(passthrough.data()[i], std::clamp(x.data()[i], 0.0f, 1.0f));
}

TEST(Codec, EncodeWritesContainerPng) {
    Files f;
    ImageTensor container;
    const auto out = f.dir / "container.png";
    const auto summary = encode_file(model_k2(), f.cover, {f.s1, f.s2}, out, {}, &container);
    ASSERT_TRUE(std::filesystem::exists(out));
    const auto back = load_image8(out);
    EXPECT_EQ(back.height, 64u);
    EXPECT_EQ(back.width, 64u);
    // The file holds exactly the quantised container.
    EXPECT_EQ(back, to_image8(apply_policy(container, QuantPolicy{})));
    // Clamping only moves values toward the cover's range, so RMS error grows by at most half a step.
    EXPECT_LE(std::sqrt(summary.mse_post), std::sqrt(summary.mse_pre) + 1.0 / 510.0 + 1e-9);
    EXPECT_NEAR(summary.sse_pre, summary.mse_pre * 64 * 64 * 3, 1e-6 * (1 + summary.sse_pre));
}

TEST(Codec, EncodeIsByteIdempotent) {
    Files f;
    encode_file(model_k2(), f.cover, {f.s1, f.s2}, f.dir / "a.png");
    encode_file(model_k2(), f.cover, {f.s1, f.s2}, f.dir / "b.png");
    EXPECT_EQ(load_image8(f.dir / "a.png"), load_image8(f.dir / "b.png"));
}

TEST(Codec, SecretCountMustMatchModel) {
    Files f;
    EXPECT_THROW(encode_file(model_k2(), f.cover, {f.s1}, f.dir / "c.png"), ShapeError);
    EXPECT_FALSE(std::filesystem::exists(f.dir / "c.png"));
}

TEST(Codec, DecodeMatchesInMemoryWithinOneStep) {
    Files f;
    encode_file(model_k2(), f.cover, {f.s1, f.s2}, f.dir / "c.png");
    const auto written = decode_file(model_k2(), f.dir / "c.png", f.dir / "out");
    ASSERT_EQ(written.size(), 2u);
    EXPECT_EQ(written[0].filename(), "secret_1.png");
    EXPECT_EQ(written[1].filename(), "secret_2.png");
    const auto decoded = decode_all(model_k2(), load_image(f.dir / "c.png"));
    for (std::size_t i = 0; i < 2; ++i) {
        const auto from_file = load_image(written[i]);
        ImageTensor clamped = decoded[i];
        for (auto& v : clamped.values()) v = std::clamp(v, 0.0f, 1.0f);
        EXPECT_LE(max_abs_diff(from_file, clamped), 1.0 / 255.0);
    }
}

TEST(Codec, DecodeRejectsWrongSize) {
    TempDir dir;
    save_image(smooth_image(4, 32), dir / "small.png");
    EXPECT_THROW(decode_file(model_k2(), dir / "small.png", dir / "out"), ShapeError);
    EXPECT_THROW(decode_file(model_k2(), dir / "missing.png", dir / "out"), IoError);
}
