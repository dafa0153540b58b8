#include "steglearn/gradcheck_suite.hpp"

#include <random>

#include "steglearn/model.hpp"
#include "steglearn/ops.hpp"
#include "steglearn/trainer.hpp"

namespace steglearn {

namespace {

using T4 = Tensor4<Real>;
using Array = T4::Array;

class Sampler {
  public:
    explicit Sampler(std::uint64_t seed) : rng_{seed} {}

    T4 normal(Shape4 s, double stddev = 1.0)
    {
        T4 t(s);
        std::normal_distribution<double> d(0.0, stddev);
        for (Index i = 0; i < t.size(); ++i) {
            t.data()[i] = Real(d(rng_));
        }
        return t;
    }

    void fill(Array& a, double lo, double hi)
    {
        std::uniform_real_distribution<double> d(lo, hi);
        for (Index i = 0; i < a.size(); ++i) {
            a[i] = Real(d(rng_));
        }
    }

    std::mt19937_64& rng() { return rng_; }

  private:
    std::mt19937_64 rng_;
};

std::span<Real> span_of(Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

std::vector<Real> copy_of(const Array& a) { return std::vector<Real>(a.data(), a.data() + a.size()); }

GradBlock<Real> block(std::string name, Array& values, const Array& analytic)
{
    return GradBlock<Real>{std::move(name), span_of(values), copy_of(analytic), {}};
}

void append(GradCheckReport& into, const GradCheckReport& from)
{
    into.blocks.insert(into.blocks.end(), from.blocks.begin(), from.blocks.end());
}

GraphValue<Real> value_only(Real v) { return {v, std::nullopt}; }

void check_conv(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report, const std::string& tag,
                Shape4 in_shape, Index c_out, Index k, const ConvSpec& spec)
{
    T4 x = s.normal(in_shape);
    auto kernel = LayerParams<Real>::conv(c_out, in_shape.c, k, k);
    s.fill(kernel.weights, -1, 1);
    T4 out = conv2d(x, kernel, spec);
    const Array weights = s.normal(out.shape()).data();
    out.grad() = weights;
    conv2d_backward(x, out, kernel, spec);
    std::vector<GradBlock<Real>> blocks = {block(tag + ".input", x.data(), x.grad()),
                                           block(tag + ".kernel", kernel.weights, kernel.grad)};
    append(report, grad_check<Real>([&] { return value_only((conv2d(x, kernel, spec).data() * weights).sum()); },
                                    blocks, Real(o.primitive_epsilon), o.smooth_tolerance));
}

void check_batch_norm(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report, Mode mode)
{
    const std::string tag = mode == Mode::train ? "batch_norm.train" : "batch_norm.eval";
    T4 x = s.normal({3, 2, 3, 3}, 2.0);
    BatchNormState<Real> bn(2);
    bn.mode = mode;
    s.fill(bn.gamma(), 0.5, 1.5);
    s.fill(bn.beta(), -0.5, 0.5);
    s.fill(bn.running_mean, -0.5, 0.5);
    s.fill(bn.running_var, 0.5, 2.0);
    BatchNormCache<Real> cache;
    T4 out = batch_norm(x, bn, &cache);
    const Array weights = s.normal(out.shape()).data();
    out.grad() = weights;
    batch_norm_backward(x, out, bn, cache);
    std::vector<GradBlock<Real>> blocks = {block(tag + ".input", x.data(), x.grad()),
                                           block(tag + ".gamma", bn.gamma(), bn.affine.grad),
                                           block(tag + ".beta", bn.beta(), *bn.affine.bias_grad)};
    append(report, grad_check<Real>([&] { return value_only((batch_norm(x, bn).data() * weights).sum()); }, blocks,
                                    Real(o.primitive_epsilon), o.smooth_tolerance));
}

void check_activation(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report, Activation kind,
                      const std::string& tag)
{
    T4 x = s.normal({2, 3, 4, 4});
    x.data()[0] = 0; // the kink itself; excluded below
    T4 out = activation(x, kind);
    const Array weights = s.normal(out.shape()).data();
    out.grad() = weights;
    activation_backward(x, out, kind);
    std::vector<GradBlock<Real>> blocks = {block(tag + ".input", x.data(), x.grad())};
    const bool kinked = kind != Activation::tanh;
    if (kinked) {
        const Real eps = Real(o.primitive_epsilon);
        const Array& xs = x.data();
        blocks[0].exclude = [&xs, eps](Index i) { return std::abs(xs[i]) < 2 * eps; };
    }
    append(report, grad_check<Real>([&] { return value_only((activation(x, kind).data() * weights).sum()); }, blocks,
                                    Real(o.primitive_epsilon), kinked ? o.kink_tolerance : o.smooth_tolerance));
}

void check_pool(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report, const PoolSpec& spec,
                Shape4 shape, const std::string& tag)
{
    T4 x = s.normal(shape);
    T4 out = pool(x, spec);
    const Array weights = s.normal(out.shape()).data();
    out.grad() = weights;
    pool_backward(x, out, spec);
    std::vector<GradBlock<Real>> blocks = {block(tag + ".input", x.data(), x.grad())};
    append(report, grad_check<Real>([&] { return value_only((pool(x, spec).data() * weights).sum()); }, blocks,
                                    Real(o.primitive_epsilon), o.smooth_tolerance));
}

void check_dense_nll(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report)
{
    T4 features = s.normal({4, 3, 2, 2});
    auto dense = LayerParams<Real>::dense(2, 12);
    s.fill(dense.weights, -0.5, 0.5);
    s.fill(*dense.bias, -0.2, 0.2);
    const std::vector<int> labels = {0, 1, 1, 0};
    const auto result = dense_softmax_nll<Real>(features, dense, labels);
    dense_softmax_nll_backward<Real>(features, dense, result, labels, Real(1));
    std::vector<GradBlock<Real>> blocks = {block("dense_softmax_nll.features", features.data(), features.grad()),
                                           block("dense_softmax_nll.weights", dense.weights, dense.grad),
                                           block("dense_softmax_nll.bias", *dense.bias, *dense.bias_grad)};
    append(report, grad_check<Real>([&] { return value_only(dense_softmax_nll<Real>(features, dense, labels).loss); },
                                    blocks, Real(o.primitive_epsilon), o.smooth_tolerance));
}

void check_smooth_l1(Sampler& s, const GradCheckSuiteOptions& o, GradCheckReport& report)
{
    T4 target = s.normal({2, 1, 4, 4});
    T4 pred = target;
    Array offsets(pred.size());
    s.fill(offsets, -3, 3);
    pred.data() += offsets;
    smooth_l1_backward(pred, target, Real(1));
    std::vector<GradBlock<Real>> blocks = {block("smooth_l1.pred", pred.data(), pred.grad())};
    append(report, grad_check<Real>([&] { return value_only(smooth_l1(pred, target)); }, blocks,
                                    Real(o.primitive_epsilon), o.smooth_tolerance));
}

} // namespace

GradCheckReport check_primitives(const GradCheckSuiteOptions& o)
{
    Sampler s(o.seed);
    GradCheckReport report;
    check_conv(s, o, report, "conv2d.replicate", {1, 2, 6, 6}, 3, 3, ConvSpec{1, 1, PadMode::replicate});
    check_conv(s, o, report, "conv2d.zero_stride2", {2, 1, 7, 7}, 2, 3, ConvSpec{2, 1, PadMode::zero});
    check_batch_norm(s, o, report, Mode::train);
    check_batch_norm(s, o, report, Mode::eval);
    check_activation(s, o, report, Activation::abs, "abs");
    check_activation(s, o, report, Activation::tanh, "tanh");
    check_activation(s, o, report, Activation::relu, "relu");
    check_pool(s, o, report, PoolSpec{PoolKind::avg, 5, 2, 2, PadMode::replicate}, {1, 2, 7, 7}, "avg_pool.5x5s2");
    check_pool(s, o, report, PoolSpec{PoolKind::avg, 2, 2, 0, PadMode::zero}, {1, 1, 4, 4}, "avg_pool.2x2s2");
    check_pool(s, o, report, PoolSpec{PoolKind::global_avg, 0, 0, 0, PadMode::replicate}, {2, 3, 3, 3}, "global_avg");
    check_dense_nll(s, o, report);
    check_smooth_l1(s, o, report);
    return report;
}

GradCheckReport check_joint_graph(const GradCheckSuiteOptions& o)
{
    TrainConfig config;
    config.seed = o.seed;
    auto model = init_model<Real>(config);
    const Real lambda = Real(config.lambda);

    Sampler s(derive_seed(o.seed, 1));
    Batch<Real> batch;
    batch.images = T4(2, 1, o.size, o.size);
    batch.covers = T4(2, 1, o.size, o.size);
    batch.labels = {0, 1};
    std::uniform_real_distribution<double> pixel(0.2, 0.8);
    std::bernoulli_distribution flip(0.2), up(0.5);
    for (Index i = 0; i < o.size * o.size; ++i) {
        const Real c = Real(pixel(s.rng()));
        const Real delta = flip(s.rng()) ? Real(up(s.rng()) ? 1 : -1) / Real(255) : Real(0);
        batch.images.data()[i] = c;
        batch.images.data()[o.size * o.size + i] = c + delta;
        batch.covers.data()[i] = c;
        batch.covers.data()[o.size * o.size + i] = c;
    }

    zero_grad(model);
    auto pass = joint_forward(model, batch, lambda, Mode::train);
    joint_backward(model, pass, batch, lambda);

    std::vector<GradBlock<Real>> blocks;
    for_each_layer(model, [&](const std::string& name, LayerParams<Real>& p) {
        const bool bn = p.kind == LayerKind::batchnorm;
        blocks.push_back(block("joint." + name + (bn ? ".gamma" : ".weights"), p.weights, p.grad));
        if (p.bias) {
            blocks.push_back(block("joint." + name + (bn ? ".beta" : ".bias"), *p.bias, *p.bias_grad));
        }
    });
    return grad_check<Real>(
        [&] {
            KinkMonitor kinks;
            const auto p = joint_forward(model, batch, lambda, Mode::train, &kinks);
            return GraphValue<Real>{p.loss.J, kinks.signature()};
        },
        blocks, Real(o.graph_epsilon), o.kink_tolerance);
}

GradCheckReport run_gradcheck_suite(const GradCheckSuiteOptions& o)
{
    GradCheckReport report = check_primitives(o);
    append(report, check_joint_graph(o));
    return report;
}

} // namespace steglearn
