#pragma once

#include "steglearn/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace steglearn {

enum class LayerKind { conv, batchnorm, dense };

/**
 * Learnable weights of one layer plus their gradient and momentum buffers.
 *
 * conv:      weights (c_out, c_in, kh, kw), no bias
 * batchnorm: weights = gamma (c), bias = beta (c)
 * dense:     weights (outputs, inputs) row-major, bias (outputs)
 */
template <typename Scalar>
struct LayerParams {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    LayerKind kind = LayerKind::conv;
    std::vector<Index> shape;
    Array weights;
    Array grad;
    Array momentum;
    std::optional<Array> bias;
    std::optional<Array> bias_grad;
    std::optional<Array> bias_momentum;
    Scalar weight_decay = 0;

    static LayerParams conv(Index c_out, Index c_in, Index kh, Index kw)
    {
        LayerParams p;
        p.kind = LayerKind::conv;
        p.shape = {c_out, c_in, kh, kw};
        p.allocate(c_out * c_in * kh * kw);
        return p;
    }

    static LayerParams dense(Index outputs, Index inputs)
    {
        LayerParams p;
        p.kind = LayerKind::dense;
        p.shape = {outputs, inputs};
        p.allocate(outputs * inputs);
        p.allocate_bias(outputs);
        return p;
    }

    static LayerParams batchnorm(Index channels)
    {
        LayerParams p;
        p.kind = LayerKind::batchnorm;
        p.shape = {channels};
        p.allocate(channels);
        p.weights.setOnes();
        p.allocate_bias(channels);
        return p;
    }

    Index rows() const { return shape.empty() ? 0 : shape.front(); }

    /// Product of all extents after the first (fan-in for conv and dense).
    Index cols() const
    {
        Index k = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) {
            k *= shape[i];
        }
        return k;
    }

    void zero_grad()
    {
        grad.setZero();
        if (bias_grad) {
            bias_grad->setZero();
        }
    }

  private:
    void allocate(Index count)
    {
        weights = Array::Zero(count);
        grad = Array::Zero(count);
        momentum = Array::Zero(count);
    }

    void allocate_bias(Index count)
    {
        bias = Array::Zero(count);
        bias_grad = Array::Zero(count);
        bias_momentum = Array::Zero(count);
    }
};

enum class Mode { train, eval };

template <typename Scalar>
struct BatchNormState {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    LayerParams<Scalar> affine; // gamma in weights, beta in bias
    Array running_mean;
    Array running_var;
    Scalar eps = Scalar(1e-5);
    Scalar momentum_bn = Scalar(0.1);
    Mode mode = Mode::train;

    explicit BatchNormState(Index channels = 0)
        : affine{LayerParams<Scalar>::batchnorm(channels)},
          running_mean{Array::Zero(channels)},
          running_var{Array::Ones(channels)}
    {
    }

    Index channels() const { return running_mean.size(); }
    Array& gamma() { return affine.weights; }
    Array& beta() { return *affine.bias; }
    const Array& gamma() const { return affine.weights; }
    const Array& beta() const { return *affine.bias; }
};

} // namespace steglearn
