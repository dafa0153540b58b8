#pragma once

// Compact five-group classifier over the stacked residuals:
//   G1 conv 8@5x5  -> abs -> BN -> tanh -> avgpool 5/2
//   G2 conv 16@5x5 -> BN -> tanh -> avgpool 5/2
//   G3 conv 32@1x1 -> BN -> relu -> avgpool 5/2
//   G4 conv 64@1x1 -> BN -> relu -> avgpool 5/2
//   G5 conv 128@1x1 -> BN -> relu -> global avgpool
//   dense 128 -> 2 -> softmax

#include "steglearn/layers.hpp"
#include "steglearn/ops.hpp"
#include "steglearn/tensor.hpp"

#include <array>
#include <span>
#include <string>

namespace steglearn {

inline constexpr Index kStegGroups = 5;
inline constexpr std::array<Index, kStegGroups> kStegWidths = {8, 16, 32, 64, 128};
inline constexpr std::array<Index, kStegGroups> kStegKernels = {5, 5, 1, 1, 1};
inline constexpr Index kResidualChannels = 2;

template <typename Scalar>
struct ConvGroup {
    LayerParams<Scalar> conv;
    ConvSpec conv_spec;
    bool abs_first = false;
    BatchNormState<Scalar> bn;
    Activation act = Activation::tanh;
    PoolSpec pool;
};

template <typename Scalar>
struct StegNetParams {
    std::array<ConvGroup<Scalar>, kStegGroups> groups;
    LayerParams<Scalar> dense;

    /// Zero-weight network with the fixed group layout.
    static StegNetParams make()
    {
        StegNetParams p;
        Index in = kResidualChannels;
        for (Index g = 0; g < kStegGroups; ++g) {
            auto& grp = p.groups[static_cast<std::size_t>(g)];
            const Index width = kStegWidths[static_cast<std::size_t>(g)];
            const Index k = kStegKernels[static_cast<std::size_t>(g)];
            grp.conv = LayerParams<Scalar>::conv(width, in, k, k);
            grp.conv_spec = same_conv(k);
            grp.abs_first = g == 0;
            grp.bn = BatchNormState<Scalar>(width);
            grp.act = g < 2 ? Activation::tanh : Activation::relu;
            grp.pool = g + 1 < kStegGroups ? PoolSpec{PoolKind::avg, 5, 2, 2, PadMode::replicate}
                                           : PoolSpec{PoolKind::global_avg, 0, 0, 0, PadMode::replicate};
            in = width;
        }
        p.dense = LayerParams<Scalar>::dense(2, in);
        return p;
    }

    Index parameter_count() const
    {
        Index total = dense.weights.size() + dense.bias->size();
        for (const auto& g : groups) {
            total += g.conv.weights.size() + g.bn.affine.weights.size() + g.bn.affine.bias->size();
        }
        return total;
    }
};

template <typename Scalar>
struct GroupTape {
    Tensor4<Scalar> conv_out;
    Tensor4<Scalar> abs_out;
    Tensor4<Scalar> bn_out;
    Tensor4<Scalar> act_out;
    Tensor4<Scalar> pooled;
    BatchNormCache<Scalar> bn_cache;
};

template <typename Scalar>
struct StegNetTape {
    Tensor4<Scalar> input;
    std::array<GroupTape<Scalar>, kStegGroups> groups;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> probabilities;

    Tensor4<Scalar>& features() { return groups.back().pooled; }
    const Tensor4<Scalar>& features() const { return groups.back().pooled; }

    /// Group-1 maps right after the abs layer.
    const Tensor4<Scalar>& abs_maps() const { return groups.front().abs_out; }
};

/**
 * Forward pass over (n, 2, h, w) residual stacks. Train mode uses batch
 * statistics and updates the running statistics; eval mode uses the running
 * statistics only.
 */
template <typename Scalar>
StegNetTape<Scalar> stegnet_forward(Tensor4<Scalar> residuals, StegNetParams<Scalar>& params, Mode mode,
                                    KinkMonitor* kinks = nullptr)
{
    if (residuals.c() != kResidualChannels) {
        throw DimensionError("stegnet_forward: expected 2 residual channels, got " + std::to_string(residuals.c()));
    }
    StegNetTape<Scalar> tape;
    tape.input = std::move(residuals);
    const Tensor4<Scalar>* in = &tape.input;
    for (Index g = 0; g < kStegGroups; ++g) {
        auto& grp = params.groups[static_cast<std::size_t>(g)];
        auto& t = tape.groups[static_cast<std::size_t>(g)];
        const std::string name = "G" + std::to_string(g + 1);
        if (in->h() <= 0 || in->w() <= 0) {
            throw ConfigError("stegnet_forward: spatial extent collapsed to 0 before group " + name);
        }
        grp.bn.mode = mode;
        t.conv_out = conv2d(*in, grp.conv, grp.conv_spec);
        if (grp.abs_first) {
            t.abs_out = activation(t.conv_out, Activation::abs, kinks);
            t.bn_out = batch_norm(t.abs_out, grp.bn, &t.bn_cache);
        } else {
            t.bn_out = batch_norm(t.conv_out, grp.bn, &t.bn_cache);
        }
        t.act_out = activation(t.bn_out, grp.act, kinks);
        try {
            t.pooled = pool(t.act_out, grp.pool);
        } catch (const ConfigError& e) {
            throw ConfigError("stegnet_forward: group " + name + ": " + e.what());
        }
        in = &t.pooled;
    }
    tape.probabilities = dense_softmax(tape.features(), params.dense);
    return tape;
}

/// Class probabilities only; columns are (cover, stego).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 2> stegnet_probabilities(Tensor4<Scalar> residuals, StegNetParams<Scalar>& params,
                                                               Mode mode)
{
    return stegnet_forward(std::move(residuals), params, mode).probabilities;
}

/// Batch-mean negative log-likelihood of the correct class.
template <typename Scalar>
NllResult<Scalar> classification_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, 2>& probabilities,
                                      std::span<const int> labels)
{
    return nll_loss<Scalar>(probabilities, labels);
}

/**
 * Backward of `scale * classification_loss`. Accumulates into every layer's
 * gradient buffers and into tape.input.grad().
 */
template <typename Scalar>
void stegnet_backward(StegNetTape<Scalar>& tape, StegNetParams<Scalar>& params, std::span<const int> labels,
                      Scalar scale)
{
    DenseNllResult<Scalar> head;
    head.probabilities = tape.probabilities;
    dense_softmax_nll_backward(tape.features(), params.dense, head, labels, scale);
    for (Index g = kStegGroups - 1; g >= 0; --g) {
        auto& grp = params.groups[static_cast<std::size_t>(g)];
        auto& t = tape.groups[static_cast<std::size_t>(g)];
        Tensor4<Scalar>& in = g == 0 ? tape.input : tape.groups[static_cast<std::size_t>(g - 1)].pooled;
        pool_backward(t.act_out, t.pooled, grp.pool);
        activation_backward(t.bn_out, t.act_out, grp.act);
        if (grp.abs_first) {
            batch_norm_backward(t.abs_out, t.bn_out, grp.bn, t.bn_cache);
            activation_backward(t.conv_out, t.abs_out, Activation::abs);
        } else {
            batch_norm_backward(t.conv_out, t.bn_out, grp.bn, t.bn_cache);
        }
        conv2d_backward(in, t.conv_out, grp.conv, grp.conv_spec);
    }
}

} // namespace steglearn
