#include <gtest/gtest.h>

#include "cert_cases.hpp"
#include "pseudoseg/error.hpp"
#include "pseudoseg/gradcheck.hpp"
#include "pseudoseg/netops.hpp"
#include "support.hpp"

using namespace pseudoseg;
using namespace pseudoseg::nn;
using namespace testing_support;

namespace {

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

} // namespace

TEST(Conv2d, UnitKernelIsIdentity)
{
    Rng rng(1);
    const auto x = random_tensor<double>({2, 1, 4, 5}, rng);
    const auto y = conv2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}));
    EXPECT_EQ(y, x);
}

TEST(Conv2d, OnesKernelSumsNeighbourhood)
{
    const Tensor<double> x({1, 1, 5, 5}, 2.5);
    const auto y = conv2d(x, Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1}));
    EXPECT_DOUBLE_EQ(y[2 * 5 + 2], 9 * 2.5);
    EXPECT_DOUBLE_EQ(y[0], 4 * 2.5); // corner sees zero padding
}

TEST(Conv2d, MatchesLoopOracle)
{
    Rng rng(2);
    const auto x = random_tensor<double>({1, 2, 5, 5}, rng);
    const auto k = random_tensor<double>({3, 2, 3, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    const auto y = conv2d(x, k, b);
    ASSERT_EQ(y.dims(), (std::vector<std::int64_t>{1, 3, 5, 5}));
    const auto ref = loop_conv3d(to_vec(x), 2, 1, 5, 5, to_vec(k), 3, 1, 3, 3, to_vec(b));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
}

TEST(Conv2d, FloatPathMatchesLoopOracle)
{
    Rng rng(12);
    const auto x = random_tensor<double>({2, 3, 7, 6}, rng);
    const auto k = random_tensor<double>({4, 3, 3, 5}, rng);
    const auto b = random_tensor<double>({4}, rng);
    const auto y = conv2d(x.cast<float>(), k.cast<float>(), b.cast<float>());
    for (std::int64_t n = 0; n < 2; ++n) {
        std::vector<double> xn(x.data().begin() + n * 126, x.data().begin() + (n + 1) * 126);
        const auto ref = loop_conv3d(xn, 3, 1, 7, 6, to_vec(k), 4, 1, 3, 5, to_vec(b));
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[n * 168 + i], ref[i], 1e-5);
    }
}

TEST(Conv2d, ChannelMismatchAndEvenKernelAreErrors)
{
    EXPECT_THROW(conv2d(Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 3, 3, 3}), Tensor<double>({1})), InvalidArgument);
    EXPECT_THROW(conv2d(Tensor<double>({1, 1, 4, 4}), Tensor<double>({1, 1, 2, 2}), Tensor<double>({1})), InvalidArgument);
}

TEST(Conv3d, IdentityAndOnesKernel)
{
    Rng rng(3);
    const auto x = random_tensor<double>({1, 1, 3, 4, 5}, rng);
    EXPECT_EQ(conv3d(x, Tensor<double>({1, 1, 1, 1, 1}, 1.0), Tensor<double>({1})), x);
    const Tensor<double> c({1, 1, 5, 5, 5}, -1.5);
    const auto y = conv3d(c, Tensor<double>({1, 1, 3, 3, 3}, 1.0), Tensor<double>({1}));
    EXPECT_DOUBLE_EQ(y[(2 * 5 + 2) * 5 + 2], 27 * -1.5);
}

TEST(Conv3d, MatchesLoopOracle)
{
    Rng rng(4);
    const auto x = random_tensor<double>({1, 2, 4, 5, 6}, rng);
    const auto k = random_tensor<double>({3, 2, 3, 3, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    const auto y = conv3d(x, k, b);
    const auto ref = loop_conv3d(to_vec(x), 2, 4, 5, 6, to_vec(k), 3, 3, 3, 3, to_vec(b));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
}

TEST(Conv3d, LinearInInput)
{
    Rng rng(5);
    const auto x = random_tensor<double>({1, 2, 3, 4, 4}, rng);
    const auto z = random_tensor<double>({1, 2, 3, 4, 4}, rng);
    const auto k = random_tensor<double>({2, 2, 3, 3, 3}, rng);
    const auto b = random_tensor<double>({2}, rng);
    const double a = 0.7, c = -1.3;
    Tensor<double> mix(x.dims());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * z[i];
    const auto ym = conv3d(mix, k, b), yx = conv3d(x, k, b), yz = conv3d(z, k, b);
    const std::int64_t per = 3 * 4 * 4;
    for (std::size_t i = 0; i < ym.size(); ++i) {
        const double bias = b[static_cast<std::size_t>(static_cast<std::int64_t>(i) / per % 2)];
        EXPECT_NEAR(ym[i] - bias, a * (yx[i] - bias) + c * (yz[i] - bias), 1e-6);
    }
}

TEST(ShapeFunctions, MatchForwardOutputsOnRandomShapes)
{
    Rng rng(6);
    for (int t = 0; t < 30; ++t) {
        const auto B = 1 + static_cast<std::int64_t>(rng.below(2)), C = 1 + static_cast<std::int64_t>(rng.below(3)),
                   K = 1 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t D = 2 * (1 + static_cast<std::int64_t>(rng.below(3))), H = 2 * (1 + static_cast<std::int64_t>(rng.below(3))),
                           W = 2 * (1 + static_cast<std::int64_t>(rng.below(3)));
        const auto x = random_tensor<double>({B, C, D, H, W}, rng);
        const auto k = random_tensor<double>({K, C, 1, 3, 3}, rng);
        EXPECT_EQ(conv3d(x, k, Tensor<double>({K})).dims(), conv3d_shape(x.dims(), k.dims()));
        const ConvOptions valid{Padding::valid, {1, 1, 1}};
        if (H >= 3 && W >= 3)
            EXPECT_EQ(conv3d(x, k, Tensor<double>({K}), valid).dims(), conv3d_shape(x.dims(), k.dims(), valid));
        EXPECT_EQ(maxpool(x, {1, 2, 2}).output.dims(), maxpool_shape(x.dims(), {1, 2, 2}));
        EXPECT_EQ(upsample(x, {2, 1, 3}).dims(), upsample_shape(x.dims(), {2, 1, 3}));
        const auto x2 = random_tensor<double>({B, C, H, W}, rng);
        const auto k2 = random_tensor<double>({K, C, 3, 1}, rng);
        EXPECT_EQ(conv2d(x2, k2, Tensor<double>({K})).dims(), conv2d_shape(x2.dims(), k2.dims()));
        const auto d = random_tensor<double>({B, C * H}, rng);
        EXPECT_EQ(dense(d, random_tensor<double>({K, C * H}, rng), Tensor<double>({K})).dims(),
                  (std::vector<std::int64_t>{B, K}));
    }
}

TEST(MaxPool, ForcedValuesAndErrors)
{
    const Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto y = maxpool(x, {2, 2});
    ASSERT_EQ(y.output.size(), 1u);
    EXPECT_EQ(y.output[0], 4);
    const Tensor<double> c({1, 2, 4, 4}, 3.0);
    const auto pooled = maxpool(c, {2, 2});
    for (auto v : pooled.output.data()) EXPECT_EQ(v, 3.0);
    EXPECT_THROW(maxpool(Tensor<double>({1, 1, 3, 4}), {2, 2}), InvalidArgument);
}

TEST(MaxPool, MatchesLoopOracle)
{
    Rng rng(7);
    const auto x = random_tensor<double>({2, 3, 4, 6, 6}, rng);
    const auto y = maxpool(x, {2, 3, 2}).output;
    for (std::int64_t n = 0; n < 6; ++n)
        for (std::int64_t z = 0; z < 2; ++z)
            for (std::int64_t r = 0; r < 2; ++r)
                for (std::int64_t c = 0; c < 3; ++c) {
                    double m = -INFINITY;
                    for (std::int64_t a = 0; a < 2; ++a)
                        for (std::int64_t b = 0; b < 3; ++b)
                            for (std::int64_t e = 0; e < 2; ++e)
                                m = std::max(m, x[static_cast<std::size_t>(((n * 4 + 2 * z + a) * 6 + 3 * r + b) * 6 + 2 * c + e)]);
                    EXPECT_EQ(y[static_cast<std::size_t>(((n * 2 + z) * 2 + r) * 3 + c)], m);
                }
}

TEST(Upsample, ReplicatesAndComposes)
{
    const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{1, 2});
    const auto y = upsample(x, {2, 2});
    EXPECT_EQ(y.dims(), (std::vector<std::int64_t>{1, 1, 2, 4}));
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
    Rng rng(8);
    const auto r = random_tensor<double>({1, 2, 2, 3, 2}, rng);
    EXPECT_EQ(upsample(r, {1, 1, 1}), r);
    EXPECT_EQ(maxpool(upsample(r, {2, 1, 3}), {2, 1, 3}).output, r);
    EXPECT_THROW(upsample(r, {0, 1, 1}), InvalidArgument);
}

TEST(Dense, IdentityZeroAndOracle)
{
    Rng rng(9);
    const auto x = random_tensor<double>({3, 4}, rng);
    Tensor<double> eye({4, 4});
    for (int i = 0; i < 4; ++i) eye[i * 5] = 1;
    EXPECT_EQ(dense(x, eye, Tensor<double>({4})), x);
    const auto b = random_tensor<double>({2}, rng);
    const auto z = dense(x, Tensor<double>({2, 4}), b);
    for (int n = 0; n < 3; ++n)
        for (int m = 0; m < 2; ++m) EXPECT_EQ(z[n * 2 + m], b[m]);
    const auto w = random_tensor<double>({5, 4}, rng);
    const auto bb = random_tensor<double>({5}, rng);
    const auto y = dense(x, w, bb);
    for (int n = 0; n < 3; ++n)
        for (int m = 0; m < 5; ++m) {
            double s = bb[m];
            for (int k = 0; k < 4; ++k) s += x[n * 4 + k] * w[m * 4 + k];
            EXPECT_NEAR(y[n * 5 + m], s, 1e-6);
        }
}

TEST(Sigmoid, ValuesSymmetryAndSaturation)
{
    Tensor<double> x({1, 7}, std::vector<double>{0, 1, -1, 20, -20, 700, -700});
    const auto y = sigmoid(x);
    EXPECT_EQ(y[0], 0.5);
    EXPECT_NEAR(y[1] + y[2], 1.0, 1e-15);
    for (int i = 1; i < 5; ++i) EXPECT_NEAR(y[i], 1.0 / (1.0 + std::exp(-x[i])), 1e-15);
    EXPECT_TRUE(std::isfinite(y[5]) && std::isfinite(y[6]));
    EXPECT_LE(y[6], y[4]);
    EXPECT_LE(y[3], y[5]);
    for (auto v : y.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Relu, MatchesMaxOracle)
{
    Rng rng(10);
    const auto x = random_tensor<double>({4, 9}, rng);
    const auto y = relu(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0, x[i]));
}

TEST(ConcatSplit, RoundTrip)
{
    Rng rng(11);
    const auto a = random_tensor<double>({2, 2, 2, 3, 3}, rng);
    const auto b = random_tensor<double>({2, 3, 2, 3, 3}, rng);
    const auto c = concat_channels(a, b);
    EXPECT_EQ(c.dims(), (std::vector<std::int64_t>{2, 5, 2, 3, 3}));
    const auto [sa, sb] = split_channels(c, 2);
    EXPECT_EQ(sa, a);
    EXPECT_EQ(sb, b);
}

TEST(GradCheck, EveryOpAndCompositionPasses)
{
    for (const auto& c : certification_cases()) {
        const auto r = grad_check(c.op, c.point, {});
        EXPECT_TRUE(r.pass) << r.op << " max rel error " << r.max_rel_error << " at " << r.worst;
        EXPECT_EQ(r.pass, r.max_rel_error < r.tolerance);
        EXPECT_GT(r.coordinates, 0u);
    }
}

TEST(GradCheck, LargeTensorsAreSubsampled)
{
    Rng rng(13);
    const CheckedOp op{"relu_big", [](const std::vector<Tensor<double>>& a) { return relu(a[0]); },
                       [](const std::vector<Tensor<double>>& a, const Tensor<double>& g) {
                           return std::vector<Tensor<double>>{relu_backward(a[0], g)};
                       }};
    auto x = random_tensor<double>({50, 100}, rng, 0.1, 1.0);
    const auto r = grad_check(op, {x});
    EXPECT_TRUE(r.pass);
    EXPECT_GE(r.coordinates, 200u);
    EXPECT_LT(r.coordinates, x.size());
}

TEST(GradCheck, CorruptedGradientFails)
{
    Rng rng(14);
    const CheckedOp bad{"dense_corrupt", [](const std::vector<Tensor<double>>& a) { return dense(a[0], a[1], a[2]); },
                        [](const std::vector<Tensor<double>>& a, const Tensor<double>& g) {
                            auto r = dense_backward(a[0], a[1], g);
                            r.weights[0] *= 1.1;
                            return std::vector<Tensor<double>>{r.input, r.weights, r.bias};
                        }};
    const auto r = grad_check(bad, {random_tensor<double>({2, 3}, rng), random_tensor<double>({2, 3}, rng),
                                    random_tensor<double>({2}, rng)});
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, NonFiniteValuesThrow)
{
    const CheckedOp op{"log", [](const std::vector<Tensor<double>>& a) {
                           Tensor<double> y(a[0].dims());
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(a[0][i]);
                           return y;
                       },
                       [](const std::vector<Tensor<double>>& a, const Tensor<double>& g) {
                           Tensor<double> d(a[0].dims());
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / a[0][i];
                           return std::vector<Tensor<double>>{d};
                       }};
    EXPECT_THROW(grad_check(op, {Tensor<double>({2}, std::vector<double>{1.0, -1.0})}), NumericalError);
}
