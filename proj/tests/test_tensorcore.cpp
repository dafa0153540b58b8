#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "steglearn/gradcheck.hpp"
#include "steglearn/ops.hpp"

using namespace steglearn;

namespace {

using T = Tensor4<double>;

T random_tensor(Shape4 s, std::uint64_t seed, double lo = -1, double hi = 1)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    T t(s);
    for (Index i = 0; i < t.size(); ++i) {
        t.data()[i] = u(rng);
    }
    return t;
}

LayerParams<double> random_kernel(Index co, Index ci, Index k, std::uint64_t seed)
{
    auto p = LayerParams<double>::conv(co, ci, k, k);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    for (Index i = 0; i < p.weights.size(); ++i) {
        p.weights[i] = u(rng);
    }
    return p;
}

// Direct nested-loop cross-correlation.
T conv_oracle(const T& x, const LayerParams<double>& k, Index stride, Index pad, bool replicate)
{
    const Index co = k.shape[0], ci = k.shape[1], kh = k.shape[2], kw = k.shape[3];
    const Index oh = (x.h() + 2 * pad - kh) / stride + 1, ow = (x.w() + 2 * pad - kw) / stride + 1;
    T out(x.n(), co, oh, ow);
    for (Index n = 0; n < x.n(); ++n)
        for (Index o = 0; o < co; ++o)
            for (Index y = 0; y < oh; ++y)
                for (Index xx = 0; xx < ow; ++xx) {
                    double acc = 0;
                    for (Index c = 0; c < ci; ++c)
                        for (Index dy = 0; dy < kh; ++dy)
                            for (Index dx = 0; dx < kw; ++dx) {
                                Index iy = y * stride + dy - pad, ix = xx * stride + dx - pad;
                                if (replicate) {
                                    iy = std::clamp<Index>(iy, 0, x.h() - 1);
                                    ix = std::clamp<Index>(ix, 0, x.w() - 1);
                                } else if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) {
                                    continue;
                                }
                                acc += k.weights[((o * ci + c) * kh + dy) * kw + dx] * x(n, c, iy, ix);
                            }
                    out(n, o, y, xx) = acc;
                }
    return out;
}

double max_abs_diff(const T& a, const T& b)
{
    return (a.data() - b.data()).abs().maxCoeff();
}

} // namespace

TEST(Tensor, ShapeAndIndexing)
{
    T t(2, 3, 4, 5);
    EXPECT_EQ(t.size(), 120);
    t(1, 2, 3, 4) = 7;
    EXPECT_EQ(t.data()[119], 7);
    EXPECT_EQ(t.plane(1, 2)(3, 4), 7);
    EXPECT_THROW(T(1, -1, 2, 2), DimensionError);
    EXPECT_FALSE(t.has_grad());
    t.grad()[0] = 1;
    EXPECT_TRUE(t.has_grad());
}

TEST(Conv2d, MatchesNestedLoopOracle)
{
    int trial = 0;
    for (Index n : {1, 2})
        for (Index ci : {1, 3})
            for (Index co : {1, 4})
                for (Index k : {1, 3}) {
                    const T x = random_tensor({n, ci, 8, 8}, 100 + trial);
                    const auto p = random_kernel(co, ci, k, 200 + trial++);
                    const T got = conv2d(x, p, same_conv(k));
                    EXPECT_LT(max_abs_diff(got, conv_oracle(x, p, 1, k / 2, true)), 1e-10);
                }
    // strided, zero padded
    const T x = random_tensor({2, 3, 7, 7}, 9);
    const auto p = random_kernel(4, 3, 3, 10);
    const T got = conv2d(x, p, ConvSpec{2, 1, PadMode::zero});
    EXPECT_LT(max_abs_diff(got, conv_oracle(x, p, 2, 1, false)), 1e-10);
}

TEST(Conv2d, IdentityKernel)
{
    const T x = random_tensor({1, 1, 8, 8}, 3);
    auto p = LayerParams<double>::conv(1, 1, 3, 3);
    p.weights[4] = 1;
    EXPECT_EQ(max_abs_diff(conv2d(x, p, same_conv(3)), x), 0.0);
}

TEST(Conv2d, ConstantImageScalesByKernelSum)
{
    // Replicate padding keeps a constant image constant everywhere, borders included.
    const T x = T::constant({1, 1, 6, 6}, 2.5);
    const auto p = random_kernel(1, 1, 5, 4);
    const T y = conv2d(x, p, same_conv(5));
    for (Index i = 0; i < y.size(); ++i) {
        EXPECT_NEAR(y.data()[i], 2.5 * p.weights.sum(), 1e-12);
    }
}

TEST(Conv2d, ShapeErrors)
{
    const T x = random_tensor({1, 2, 8, 8}, 1);
    EXPECT_THROW(conv2d(x, random_kernel(1, 3, 3, 1), same_conv(3)), DimensionError);
    EXPECT_THROW(conv2d(x, random_kernel(1, 2, 3, 1), ConvSpec{2, 0, PadMode::zero}), ConfigError);
}

TEST(BatchNorm, TrainModeNormalizes)
{
    T x(2, 1, 1, 2);
    x.data() << 1, 2, 3, 4;
    BatchNormState<double> st(1);
    const T y = batch_norm(x, st);
    const double s = std::sqrt(1.25 + 1e-5);
    EXPECT_NEAR(y.data()[0], -1.5 / s, 1e-6);
    EXPECT_NEAR(y.data()[3], 1.5 / s, 1e-6);
    EXPECT_NEAR(st.running_mean[0], 0.25, 1e-12);
    // running variance uses the unbiased estimate 5/3
    EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(BatchNorm, EvalModeUsesRunningStats)
{
    T x(1, 1, 1, 2);
    x.data() << 3, 5;
    BatchNormState<double> st(1);
    st.mode = Mode::eval;
    st.running_mean[0] = 1;
    st.running_var[0] = 4;
    st.gamma()[0] = 2;
    st.beta()[0] = 0.5;
    const T y = batch_norm(x, st);
    EXPECT_NEAR(y.data()[0], 2 * 2 / std::sqrt(4 + 1e-5) + 0.5, 1e-6);
    EXPECT_NEAR(y.data()[1], 2 * 4 / std::sqrt(4 + 1e-5) + 0.5, 1e-6);
    EXPECT_EQ(st.running_mean[0], 1);
}

TEST(Activation, Values)
{
    T x(1, 1, 1, 3);
    x.data() << -2, 0, 1.5;
    const T a = activation(x, Activation::abs);
    const T r = activation(x, Activation::relu);
    const T t = activation(x, Activation::tanh);
    EXPECT_EQ(a.data()[0], 2);
    EXPECT_EQ(a.data()[1], 0);
    EXPECT_EQ(r.data()[0], 0);
    EXPECT_EQ(r.data()[2], 1.5);
    EXPECT_NEAR(t.data()[2], std::tanh(1.5), 1e-15);
}

TEST(Activation, SubgradientZeroAtKink)
{
    T x(1, 1, 1, 3);
    x.data() << -1, 0, 1;
    for (auto kind : {Activation::abs, Activation::relu}) {
        T y = activation(x, kind);
        y.grad().setOnes();
        x.zero_grad();
        activation_backward(x, y, kind);
        EXPECT_EQ(x.grad()[1], 0);
    }
}

TEST(Pool, Average2x2)
{
    T x(1, 1, 2, 2);
    x.data() << 1, 3, 5, 7;
    const T y = pool(x, PoolSpec{PoolKind::avg, 2, 2, 0, PadMode::replicate});
    EXPECT_EQ(y.size(), 1);
    EXPECT_DOUBLE_EQ(y.data()[0], 4);
    const T g = pool(x, PoolSpec{PoolKind::global_avg, 0, 0, 0, PadMode::replicate});
    EXPECT_DOUBLE_EQ(g.data()[0], 4);
}

TEST(Pool, ReplicatePaddedMatchesOracle)
{
    const T x = random_tensor({2, 3, 9, 8}, 21);
    const PoolSpec spec{PoolKind::avg, 5, 2, 2, PadMode::replicate};
    const T y = pool(x, spec);
    ASSERT_EQ(y.h(), 5);
    ASSERT_EQ(y.w(), 4);
    for (Index n = 0; n < 2; ++n)
        for (Index c = 0; c < 3; ++c)
            for (Index oy = 0; oy < y.h(); ++oy)
                for (Index ox = 0; ox < y.w(); ++ox) {
                    double acc = 0;
                    for (Index dy = 0; dy < 5; ++dy)
                        for (Index dx = 0; dx < 5; ++dx)
                            acc += x(n, c, std::clamp<Index>(oy * 2 + dy - 2, 0, 8),
                                     std::clamp<Index>(ox * 2 + dx - 2, 0, 7));
                    EXPECT_NEAR(y(n, c, oy, ox), acc / 25, 1e-12);
                }
}

TEST(Nll, KnownValues)
{
    Eigen::Matrix<double, Eigen::Dynamic, 2> p(1, 2);
    const int one[] = {1};
    p << 0.5, 0.5;
    EXPECT_NEAR(nll_loss<double>(p, one).loss, std::log(2.0), 1e-15);
    p << 0.0, 1.0;
    auto r = nll_loss<double>(p, one);
    EXPECT_LE(r.loss, 1e-11);
    p << 0.9, 0.1;
    EXPECT_NEAR(nll_loss<double>(p, one).loss, 2.302585, 1e-6);
    // zero probability on the true class is clamped, not infinite
    p << 1.0, 0.0;
    r = nll_loss<double>(p, one);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_EQ(r.clamp_count, 1);
}

TEST(SmoothL1, BranchValues)
{
    EXPECT_EQ(smooth_l1_element(0.0), 0.0);
    EXPECT_EQ(smooth_l1_element(0.5), 0.125);
    EXPECT_EQ(smooth_l1_element(3.0), 2.5);
    EXPECT_EQ(smooth_l1_element(-3.0), 2.5);
    EXPECT_NEAR(smooth_l1_element(1.0 - 1e-12), smooth_l1_element(1.0 + 1e-12), 1e-11);
    EXPECT_NEAR(smooth_l1_derivative(1.0 - 1e-12), smooth_l1_derivative(1.0 + 1e-12), 1e-11);
}

TEST(SmoothL1, PerImageThenBatchMean)
{
    T a(2, 1, 1, 2), b(2, 1, 1, 2);
    a.data() << 0.5, 0, 3, 0;
    EXPECT_DOUBLE_EQ(smooth_l1(a, b), ((0.125 + 0) / 2 + (2.5 + 0) / 2) / 2);
}

TEST(SmoothL1, FiniteDifferenceAtHalf)
{
    T pred(1, 1, 1, 1), target(1, 1, 1, 1);
    pred.data()[0] = 0.5;
    smooth_l1_backward(pred, target, 1.0);
    const double eps = 1e-4;
    T plus = pred, minus = pred;
    plus.data()[0] += eps;
    minus.data()[0] -= eps;
    const double numeric = (smooth_l1(plus, target) - smooth_l1(minus, target)) / (2 * eps);
    EXPECT_LT(relative_error(pred.grad()[0], numeric), 1e-5);
}

TEST(GradCheck, LinearMapIsExact)
{
    std::vector<double> w = {0.3, -1.2, 2.0};
    const std::vector<double> x = {1.5, 0.25, -0.75};
    std::vector<GradBlock<double>> blocks{{"w", w, x, {}}};
    const std::function<GraphValue<double>()> f = [&] {
        return GraphValue<double>{w[0] * x[0] + w[1] * x[1] + w[2] * x[2], std::nullopt};
    };
    const auto report = grad_check(f, blocks, 1e-5, 1e-9);
    EXPECT_TRUE(report.passed());
    EXPECT_LT(report.blocks[0].max_relative_error, 1e-9);
}

TEST(GradCheck, KinkCrossingIsExcluded)
{
    std::vector<double> v = {1e-7};
    std::vector<GradBlock<double>> blocks{{"abs", v, {0.0}, {}}};
    const std::function<GraphValue<double>()> f = [&] {
        return GraphValue<double>{std::abs(v[0]), v[0] > 0 ? 1u : 2u};
    };
    const auto report = grad_check(f, blocks, 1e-5, 1e-3);
    EXPECT_EQ(report.blocks[0].excluded, 1);
    EXPECT_TRUE(report.passed());
}

TEST(Backward, ConvAndPoolAgreeWithFiniteDifferences)
{
    T x = random_tensor({2, 2, 9, 9}, 33);
    auto p = random_kernel(3, 2, 3, 34);
    const PoolSpec ps{PoolKind::avg, 5, 2, 2, PadMode::replicate};
    const T probe = random_tensor({2, 3, 5, 5}, 35);
    auto loss = [&] { return (pool(conv2d(x, p, same_conv(3)), ps).data() * probe.data()).sum(); };

    T y = conv2d(x, p, same_conv(3));
    T z = pool(y, ps);
    z.grad() = probe.data();
    pool_backward(y, z, ps);
    conv2d_backward(x, y, p, same_conv(3));

    std::vector<GradBlock<double>> blocks;
    blocks.push_back({"x", {x.data().data(), std::size_t(x.size())},
                      {x.grad().data(), x.grad().data() + x.size()}, {}});
    blocks.push_back({"k", {p.weights.data(), std::size_t(p.weights.size())},
                      {p.grad.data(), p.grad.data() + p.grad.size()}, {}});
    const std::function<GraphValue<double>()> f = [&] { return GraphValue<double>{loss(), std::nullopt}; };
    EXPECT_TRUE(grad_check(f, blocks, 1e-5, 1e-6).passed());
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical)
{
    const T x = random_tensor({2, 3, 8, 8}, 5);
    const auto p = random_kernel(4, 3, 5, 6);
    const T a = conv2d(x, p, same_conv(5));
    const T b = conv2d(x, p, same_conv(5));
    EXPECT_TRUE((a.data() == b.data()).all());
}
