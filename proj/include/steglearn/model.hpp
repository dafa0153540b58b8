#pragma once

// The end-to-end graph: input -> residual network -> stacked residuals ->
// classifier, trained on J = (1 - lambda) * Jc + lambda * Jr.

#include "steglearn/ops.hpp"
#include "steglearn/residual_net.hpp"
#include "steglearn/steg_net.hpp"
#include "steglearn/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace steglearn {

template <typename Scalar>
struct ModelState {
    ResidualNetParams<Scalar> residual = init_residual_params<Scalar>();
    StegNetParams<Scalar> steg = StegNetParams<Scalar>::make();
};

/// Visits every learnable layer in the fixed declared order.
template <typename Scalar, typename Fn>
void for_each_layer(ModelState<Scalar>& model, Fn&& fn)
{
    fn(std::string("residual.k5"), model.residual.k5);
    fn(std::string("residual.k3"), model.residual.k3);
    for (std::size_t g = 0; g < model.steg.groups.size(); ++g) {
        const std::string prefix = "steg.g" + std::to_string(g + 1);
        fn(prefix + ".conv", model.steg.groups[g].conv);
        fn(prefix + ".bn", model.steg.groups[g].bn.affine);
    }
    fn(std::string("steg.dense"), model.steg.dense);
}

template <typename Scalar>
void zero_grad(ModelState<Scalar>& model)
{
    for_each_layer(model, [](const std::string&, LayerParams<Scalar>& p) { p.zero_grad(); });
}

/// A training or evaluation batch: inputs, their covers, labels (0 cover, 1 stego).
template <typename Scalar>
struct Batch {
    Tensor4<Scalar> images;
    Tensor4<Scalar> covers;
    std::vector<int> labels;
};

template <typename Scalar>
struct JointLoss {
    Scalar J = 0;
    Scalar Jc = 0;
    Scalar Jr = 0;
};

template <typename Scalar>
Scalar combine_losses(Scalar Jc, Scalar Jr, Scalar lambda)
{
    return (Scalar(1) - lambda) * Jc + lambda * Jr;
}

template <typename Scalar>
struct JointPass {
    Tensor4<Scalar> x;
    ResidualOutput<Scalar> residual;
    StegNetTape<Scalar> steg;
    JointLoss<Scalar> loss;
    Index clamp_count = 0;
};

inline void check_lambda(double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("joint_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
}

template <typename Scalar>
JointPass<Scalar> joint_forward(ModelState<Scalar>& model, const Batch<Scalar>& batch, Scalar lambda, Mode mode,
                                KinkMonitor* kinks = nullptr)
{
    check_lambda(double(lambda));
    ensure_same_shape(batch.images, batch.covers, "joint_forward");
    if (static_cast<Index>(batch.labels.size()) != batch.images.n()) {
        throw DimensionError("joint_forward: " + std::to_string(batch.labels.size()) + " labels for " +
                             std::to_string(batch.images.n()) + " images");
    }
    JointPass<Scalar> pass;
    pass.x = batch.images;
    pass.residual = residual_forward(pass.x, model.residual);
    pass.steg = stegnet_forward(stack_residuals(pass.residual), model.steg, mode, kinks);
    const auto nll = classification_loss<Scalar>(pass.steg.probabilities, batch.labels);
    pass.clamp_count = nll.clamp_count;
    pass.loss.Jc = nll.loss;
    pass.loss.Jr = reconstruction_loss(pass.residual, batch.covers);
    pass.loss.J = combine_losses(pass.loss.Jc, pass.loss.Jr, lambda);
    return pass;
}

/**
 * Accumulates dJ/dtheta for both sub-networks. The residual kernels receive
 * the reconstruction gradient and, unless `classifier_to_residual` is false,
 * the classifier gradient routed back through the residual subtraction.
 */
template <typename Scalar>
void joint_backward(ModelState<Scalar>& model, JointPass<Scalar>& pass, const Batch<Scalar>& batch, Scalar lambda,
                    bool classifier_to_residual = true)
{
    stegnet_backward(pass.steg, model.steg, batch.labels, Scalar(1) - lambda);
    unstack_residual_grad(pass.steg.input, pass.residual);
    reconstruction_loss_backward(pass.residual, batch.covers, lambda);
    residual_backward(pass.x, pass.residual, model.residual, classifier_to_residual);
}

template <typename Scalar>
JointLoss<Scalar> joint_loss(const Tensor4<Scalar>& x, const Tensor4<Scalar>& covers, std::span<const int> labels,
                             ModelState<Scalar>& model, Scalar lambda, Mode mode = Mode::train)
{
    Batch<Scalar> batch{x, covers, std::vector<int>(labels.begin(), labels.end())};
    return joint_forward(model, batch, lambda, mode).loss;
}

} // namespace steglearn
