#include <gtest/gtest.h>

#include <cmath>

#include "deepsteg/network.hpp"
#include "support/oracle.hpp"

using namespace deepsteg;
using deepsteg::support::naive_net;
using deepsteg::support::random_tensor;

namespace {

NetworkSpec spec_with(std::size_t k) {
    NetworkSpec s;
    s.k = k;
    return s;
}

template <typename T>
StegoBatch<T> random_batch(std::size_t k, Shape s, std::uint64_t seed) {
    StegoBatch<T> b;
    b.cover = random_tensor<T>(s, seed);
    for (std::size_t i = 0; i < k; ++i) b.secrets.push_back(random_tensor<T>(s, seed + 1 + i));
    return b;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

// Random biases too, so the oracle comparison exercises them.
template <typename T>
ModelParams<T> random_model(std::size_t k, std::uint64_t seed) {
    auto m = init_params<T>(spec_with(k), seed);
    std::mt19937_64 rng(seed + 7);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (auto& v : param_views(m))
        if (v.dims.size() == 1)
            for (auto& b : v.values) b = static_cast<T>(u(rng));
    return m;
}

template <typename T>
Tensor<T> oracle_encode(const ModelParams<T>& m, const StegoBatch<T>& b) {
    std::vector<Tensor<T>> feats;
    for (std::size_t i = 0; i < m.spec.k; ++i) feats.push_back(naive_net(m.prep[i], b.secrets[i]));
    std::vector<const Tensor<T>*> parts{&b.cover};
    for (const auto& f : feats) parts.push_back(&f);
    return naive_net(m.hiding, concat_channels<T>(parts));
}

} // namespace

TEST(NetworkSpec, ChannelArithmetic) {
    for (std::size_t k : {1u, 2u, 3u, 5u}) EXPECT_EQ(spec_with(k).hiding_input_channels(), 3 + 65 * k);
    EXPECT_EQ(NetworkSpec{}.aggregated_channels(), 65u);
    EXPECT_THROW(make_model<float>(spec_with(0)), ShapeError);
}

TEST(InitParams, ShapesFollowSpec) {
    const auto m = init_params<float>(spec_with(3), 1);
    ASSERT_EQ(m.prep.size(), 3u);
    ASSERT_EQ(m.reveal.size(), 3u);
    EXPECT_EQ(m.prep[0].size(), 2u);
    EXPECT_EQ(m.hiding.size(), 6u);    // 5 aggregated + projection
    EXPECT_EQ(m.reveal[2].size(), 6u);

    // Closed-form count: a branch with kernel K, Cin inputs and C outputs owns K*K*Cin*C + C values.
    auto agg = [](std::size_t cin) { return 9 * cin * 50 + 50 + 16 * cin * 10 + 10 + 25 * cin * 5 + 5; };
    const std::size_t proj = 65 * 3 + 3;
    const std::size_t prep = agg(3) + agg(65);
    const std::size_t hiding = agg(3 + 65 * 3) + 4 * agg(65) + proj;
    const std::size_t reveal = agg(3) + 4 * agg(65) + proj;
    EXPECT_EQ(parameter_count(m), 3 * prep + hiding + 3 * reveal);

    for (const auto& v : param_views(m)) {
        std::size_t n = 1;
        for (auto d : v.dims) n *= d;
        EXPECT_EQ(n, v.values.size()) << v.name;
    }
    const auto views = param_views(m);
    EXPECT_EQ(views.front().name, "prep.0.agg1.conv3x3.weight");
    EXPECT_EQ(views.front().dims, (std::vector<std::size_t>{3, 3, 3, 50}));
}

TEST(InitParams, DeterministicFanInScaledZeroBias) {
    const auto a = init_params<float>(spec_with(2), 5);
    const auto b = init_params<float>(spec_with(2), 5);
    const auto c = init_params<float>(spec_with(2), 6);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (const auto& v : param_views(a)) {
        if (v.dims.size() == 1) {
            for (float x : v.values) ASSERT_EQ(x, 0.0f);
            continue;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(v.dims[0] * v.dims[1] * v.dims[2]));
        double sq = 0.0;
        for (float x : v.values) {
            ASSERT_LE(std::abs(x), bound);
            sq += static_cast<double>(x) * x;
        }
        if (v.values.size() > 2000) { // variance of U(-b, b) is b^2 / 3
            EXPECT_NEAR(sq / static_cast<double>(v.values.size()), bound * bound / 3.0, 0.1 * bound * bound / 3.0)
                << v.name;
        }
    }
}

class ShapesPerK : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ShapesPerK, ContainerAndSecretsKeepCoverShape) {
    const std::size_t k = GetParam();
    const auto m = init_params<float>(spec_with(k), k);
    const auto batch = random_batch<float>(k, {2, 16, 16, 3}, 1);
    EncodeTrace<float> trace;
    const auto container = encode_forward(m, batch, &trace);
    EXPECT_EQ(container.shape(), batch.cover.shape());
    ASSERT_EQ(trace.prep.size(), k);
    EXPECT_EQ(trace.prep[0].output().shape().channels, 65u);
    EXPECT_EQ(trace.hiding.activations.front().shape().channels, 3 + 65 * k);
    const auto decoded = decode_all(m, container);
    ASSERT_EQ(decoded.size(), k);
    for (const auto& d : decoded) EXPECT_EQ(d.shape(), batch.cover.shape());
}

INSTANTIATE_TEST_SUITE_P(K, ShapesPerK, ::testing::Values(1u, 2u, 3u, 5u));

TEST(Network, FullSizeBatchShapes) {
    const auto m = init_params<float>(spec_with(3), 1);
    const auto batch = random_batch<float>(3, {4, 64, 64, 3}, 2);
    EXPECT_EQ(prep_forward(m.prep[0], batch.secrets[0]).shape(), (Shape{4, 64, 64, 65}));
    const auto container = encode_forward(m, batch);
    EXPECT_EQ(container.shape(), (Shape{4, 64, 64, 3}));
    EXPECT_EQ(reveal_forward(m.reveal[1], container).shape(), (Shape{4, 64, 64, 3}));
}

TEST(Network, ZeroInputWithZeroBiasGivesZero) {
    const auto m = init_params<float>(spec_with(2), 3);
    const Tensor<float> zero(Shape{2, 8, 8, 3});
    const auto prep = prep_forward(m.prep[0], zero);
    for (float v : prep.values()) ASSERT_EQ(v, 0.0f);
    const auto revealed = reveal_forward(m.reveal[0], zero);
    for (float v : revealed.values()) ASSERT_EQ(v, 0.0f);
}

TEST(Network, ForwardPassesMatchOracle) {
    const auto md = random_model<double>(2, 11);
    const auto mf = model_cast<float>(md);
    const auto bd = random_batch<double>(2, {1, 8, 8, 3}, 20);
    const auto bf = batch_cast<float>(bd);

    EXPECT_LT(max_abs_diff(prep_forward(md.prep[1], bd.secrets[1]), naive_net(md.prep[1], bd.secrets[1])), 1e-10);
    EXPECT_LT(max_abs_diff(reveal_forward(md.reveal[0], bd.cover), naive_net(md.reveal[0], bd.cover)), 1e-10);
    EXPECT_LT(max_abs_diff(encode_forward(md, bd), oracle_encode(md, bd)), 1e-10);

    EXPECT_LT(max_abs_diff(prep_forward(mf.prep[1], bf.secrets[1]), naive_net(mf.prep[1], bf.secrets[1])), 1e-5);
    EXPECT_LT(max_abs_diff(reveal_forward(mf.reveal[0], bf.cover), naive_net(mf.reveal[0], bf.cover)), 1e-5);
    EXPECT_LT(max_abs_diff(encode_forward(mf, bf), oracle_encode(mf, bf)), 1e-5);
}

TEST(Network, EncodeRejectsWrongSecretCount) {
    const auto m = init_params<float>(spec_with(3), 1);
    EXPECT_THROW(encode_forward(m, random_batch<float>(2, {1, 8, 8, 3}, 1)), ShapeError);
}

TEST(Network, RevealRejectsWrongChannels) {
    const auto m = init_params<float>(spec_with(1), 1);
    EXPECT_THROW(reveal_forward(m.reveal[0], Tensor<float>(Shape{1, 8, 8, 4})), ShapeError);
}

TEST(Network, DecodersAreIndependent) {
    auto m = random_model<float>(3, 4);
    const auto container = random_tensor<float>({1, 8, 8, 3}, 5);
    const auto before = decode_all(m, container);

    // Permuting reveal networks permutes the outputs.
    auto permuted = m;
    permuted.reveal = {m.reveal[2], m.reveal[0], m.reveal[1]};
    const auto p = decode_all(permuted, container);
    EXPECT_EQ(p[0], before[2]);
    EXPECT_EQ(p[1], before[0]);
    EXPECT_EQ(p[2], before[1]);

    // Perturbing reveal network 1 changes decoded secret 1 only.
    for (auto& w : m.reveal[1][2].branches[0].weight) w *= 1.5f;
    const auto after = decode_all(m, container);
    EXPECT_EQ(after[0], before[0]);
    EXPECT_NE(after[1], before[1]);
    EXPECT_EQ(after[2], before[2]);
}

TEST(Network, DeterministicOutputs) {
    const auto m = init_params<float>(spec_with(2), 8);
    const auto b = random_batch<float>(2, {2, 8, 8, 3}, 9);
    EXPECT_EQ(encode_forward(m, b), encode_forward(m, b));
}

TEST(Network, BackpropMatchesFiniteDifferenceOnInput) {
    auto m = random_model<double>(1, 3);
    const auto x = random_tensor<double>({1, 5, 5, 3}, 4);
    NetTrace<double> trace;
    const auto y = run_net(m.reveal[0], x, &trace);
    const auto g = random_tensor<double>(y.shape(), 5, -1.0, 1.0);
    const auto dx = backprop_net<double>(m.reveal[0], trace, g, nullptr, true);
    auto f = [&](const Tensor<double>& in) {
        const auto out = run_net(m.reveal[0], in);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * g.data()[i];
        return s;
    };
    for (std::size_t i : {0u, 17u, 40u, 74u}) {
        auto xp = x, xm = x;
        xp.data()[i] += 1e-5;
        xm.data()[i] -= 1e-5;
        EXPECT_NEAR(dx.data()[i], (f(xp) - f(xm)) / 2e-5, 1e-6 * std::max(1.0, std::abs(dx.data()[i])));
    }
}
