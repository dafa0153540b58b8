#pragma once

// Differentiable primitives. Every forward is a pure function of its inputs
// and explicit parameter objects. Every backward reads `output.grad()` and
// accumulates into `input.grad()` and the layer's gradient buffers.

#include "steglearn/layers.hpp"
#include "steglearn/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace steglearn {

enum class PadMode { zero, replicate };

struct ConvSpec {
    Index stride = 1;
    Index padding = 0;
    PadMode pad_mode = PadMode::replicate;
};

/// Convolution with 'same' output extents for an odd square kernel.
inline ConvSpec same_conv(Index kernel) { return ConvSpec{1, kernel / 2, PadMode::replicate}; }

enum class Activation { abs, tanh, relu };

enum class PoolKind { avg, global_avg };

struct PoolSpec {
    PoolKind kind = PoolKind::avg;
    Index size = 2;
    Index stride = 2;
    Index padding = 0;
    PadMode pad_mode = PadMode::replicate;
};

/**
 * Records the sign pattern of every abs/relu input seen during a forward
 * pass. Two passes whose signatures differ have crossed a kink.
 */
class KinkMonitor {
  public:
    template <typename Scalar>
    void record(const Tensor4<Scalar>& input)
    {
        for (Index i = 0; i < input.size(); ++i) {
            const Scalar v = input.data()[i];
            const std::uint64_t s = v > 0 ? 1u : (v < 0 ? 2u : 3u);
            hash_ = (hash_ ^ s) * 0x100000001b3ull;
        }
    }

    std::uint64_t signature() const { return hash_; }
    void reset() { hash_ = 0xcbf29ce484222325ull; }

  private:
    std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

namespace detail {

inline Index resolve(Index i, Index extent, PadMode mode)
{
    if (i >= 0 && i < extent) {
        return i;
    }
    if (mode == PadMode::zero) {
        return -1;
    }
    return std::clamp<Index>(i, 0, extent - 1);
}

inline Index window_extent(Index in, Index kernel, Index stride, Index padding, const char* where,
                           bool exact)
{
    const Index span = in + 2 * padding - kernel;
    if (span < 0) {
        throw ConfigError(std::string(where) + ": window of " + std::to_string(kernel) +
                          " exceeds padded extent " + std::to_string(in + 2 * padding));
    }
    if (exact && span % stride != 0) {
        throw ConfigError(std::string(where) + ": output extent (" + std::to_string(in) + " + 2*" +
                          std::to_string(padding) + " - " + std::to_string(kernel) + ")/" +
                          std::to_string(stride) + " + 1 is not an integer");
    }
    return span / stride + 1;
}

/// Source index for each (output position, kernel tap); -1 marks a zero-padded tap.
inline std::vector<Index> tap_table(Index out_extent, Index kernel, Index stride, Index padding, Index in_extent,
                                    PadMode mode)
{
    std::vector<Index> table(static_cast<std::size_t>(out_extent * kernel));
    for (Index k = 0; k < kernel; ++k) {
        for (Index o = 0; o < out_extent; ++o) {
            table[static_cast<std::size_t>(k * out_extent + o)] = resolve(o * stride + k - padding, in_extent, mode);
        }
    }
    return table;
}

struct ConvTaps {
    std::vector<Index> rows; // (kh, oh)
    std::vector<Index> cols; // (kw, ow)
};

inline ConvTaps conv_taps(Index h, Index w, Index kh, Index kw, Index oh, Index ow, const ConvSpec& spec)
{
    return {tap_table(oh, kh, spec.stride, spec.padding, h, spec.pad_mode),
            tap_table(ow, kw, spec.stride, spec.padding, w, spec.pad_mode)};
}

/// Column buffer of shape (c_in*kh*kw, oh*ow) for sample `n`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> im2col(const Tensor4<Scalar>& in, Index n, Index kh, Index kw,
                                                             Index oh, Index ow, const ConvTaps& taps)
{
    // Column-major: column p = oy*ow + ox holds one receptive field; built row by row.
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> col(in.c() * kh * kw, oh * ow);
    for (Index ci = 0; ci < in.c(); ++ci) {
        const Scalar* src = in.data().data() + in.offset(n, ci, 0, 0);
        for (Index ky = 0; ky < kh; ++ky) {
            const Index* ys = taps.rows.data() + ky * oh;
            for (Index kx = 0; kx < kw; ++kx) {
                const Index* xs = taps.cols.data() + kx * ow;
                Scalar* dst = col.data() + ((ci * kh + ky) * kw + kx) * oh * ow;
                for (Index oy = 0; oy < oh; ++oy, dst += ow) {
                    const Index iy = ys[oy];
                    if (iy < 0) {
                        std::fill(dst, dst + ow, Scalar(0));
                        continue;
                    }
                    const Scalar* row = src + iy * in.w();
                    for (Index ox = 0; ox < ow; ++ox) {
                        dst[ox] = xs[ox] < 0 ? Scalar(0) : row[xs[ox]];
                    }
                }
            }
        }
    }
    return col;
}

template <typename Scalar, typename Cols>
void col2im_accumulate(const Cols& col, Tensor4<Scalar>& in, Index n, Index kh, Index kw, Index oh, Index ow,
                       const ConvTaps& taps)
{
    auto& g = in.grad();
    for (Index ci = 0; ci < in.c(); ++ci) {
        Scalar* dst = g.data() + in.offset(n, ci, 0, 0);
        for (Index ky = 0; ky < kh; ++ky) {
            const Index* ys = taps.rows.data() + ky * oh;
            for (Index kx = 0; kx < kw; ++kx) {
                const Index* xs = taps.cols.data() + kx * ow;
                const Index r = (ci * kh + ky) * kw + kx;
                for (Index oy = 0; oy < oh; ++oy) {
                    const Index iy = ys[oy];
                    if (iy < 0) {
                        continue;
                    }
                    Scalar* row = dst + iy * in.w();
                    for (Index ox = 0; ox < ow; ++ox) {
                        if (xs[ox] >= 0) {
                            row[xs[ox]] += col(r, oy * ow + ox);
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip, no bias)
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor4<Scalar> conv2d(const Tensor4<Scalar>& input, const LayerParams<Scalar>& params, const ConvSpec& spec)
{
    if (params.kind != LayerKind::conv || params.shape.size() != 4) {
        throw DimensionError("conv2d: parameters are not a 4-d convolution kernel");
    }
    const Index c_out = params.shape[0], c_in = params.shape[1], kh = params.shape[2], kw = params.shape[3];
    if (c_in != input.c()) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(c_in) + " input channels, got " +
                             std::to_string(input.c()));
    }
    if (spec.stride <= 0 || spec.padding < 0) {
        throw ConfigError("conv2d: stride must be positive and padding non-negative");
    }
    const Index oh = detail::window_extent(input.h(), kh, spec.stride, spec.padding, "conv2d", true);
    const Index ow = detail::window_extent(input.w(), kw, spec.stride, spec.padding, "conv2d", true);

    Tensor4<Scalar> out(input.n(), c_out, oh, ow);
    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> kernel(params.weights.data(), c_out, c_in * kh * kw);
    const auto taps = detail::conv_taps(input.h(), input.w(), kh, kw, oh, ow, spec);
    for (Index n = 0; n < input.n(); ++n) {
        const auto col = detail::im2col(input, n, kh, kw, oh, ow, taps);
        Eigen::Map<RowMat> dst(out.data().data() + out.offset(n, 0, 0, 0), c_out, oh * ow);
        dst.noalias() = kernel * col;
    }
    ensure_finite(out, "conv2d");
    return out;
}

template <typename Scalar>
void conv2d_backward(Tensor4<Scalar>& input, const Tensor4<Scalar>& output, LayerParams<Scalar>& params,
                     const ConvSpec& spec, bool propagate_to_input = true)
{
    const Index c_out = params.shape[0], c_in = params.shape[1], kh = params.shape[2], kw = params.shape[3];
    const Index oh = output.h(), ow = output.w();
    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> kernel(params.weights.data(), c_out, c_in * kh * kw);
    Eigen::Map<RowMat> kernel_grad(params.grad.data(), c_out, c_in * kh * kw);
    const auto taps = detail::conv_taps(input.h(), input.w(), kh, kw, oh, ow, spec);
    for (Index n = 0; n < input.n(); ++n) {
        const auto col = detail::im2col(input, n, kh, kw, oh, ow, taps);
        Eigen::Map<const RowMat> dout(output.grad().data() + output.offset(n, 0, 0, 0), c_out, oh * ow);
        kernel_grad.noalias() += dout * col.transpose();
        if (propagate_to_input) {
            const RowMat dcol = kernel.transpose() * dout;
            detail::col2im_accumulate(dcol, input, n, kh, kw, oh, ow, taps);
        }
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNormCache {
    Eigen::Array<Scalar, Eigen::Dynamic, 1> normalized; // x-hat, same layout as the input
    Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;    // per channel
    Mode mode = Mode::train;
};

template <typename Scalar>
Tensor4<Scalar> batch_norm(const Tensor4<Scalar>& input, BatchNormState<Scalar>& state,
                           BatchNormCache<Scalar>* cache = nullptr)
{
    const Index channels = input.c();
    if (channels != state.channels()) {
        throw DimensionError("batch_norm: input has " + std::to_string(channels) + " channels, state has " +
                             std::to_string(state.channels()));
    }
    const Index count = input.n() * input.h() * input.w();
    if (state.mode == Mode::train && count < 2) {
        throw ConfigError("batch_norm: train mode needs batch*h*w >= 2, got " + std::to_string(count));
    }

    Tensor4<Scalar> out(input.shape());
    Eigen::Array<Scalar, Eigen::Dynamic, 1> normalized(input.size());
    Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std(channels);
    const Index plane = input.h() * input.w();

    for (Index c = 0; c < channels; ++c) {
        Scalar mean, var;
        if (state.mode == Mode::train) {
            Scalar sum = 0;
            for (Index n = 0; n < input.n(); ++n) {
                sum += input.data().segment(input.offset(n, c, 0, 0), plane).sum();
            }
            mean = sum / Scalar(count);
            Scalar sq = 0;
            for (Index n = 0; n < input.n(); ++n) {
                sq += (input.data().segment(input.offset(n, c, 0, 0), plane) - mean).square().sum();
            }
            var = sq / Scalar(count);
            const Scalar m = state.momentum_bn;
            state.running_mean[c] = (1 - m) * state.running_mean[c] + m * mean;
            state.running_var[c] = (1 - m) * state.running_var[c] + m * var * Scalar(count) / Scalar(count - 1);
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        inv_std[c] = Scalar(1) / std::sqrt(var + state.eps);
        const Scalar g = state.gamma()[c], b = state.beta()[c];
        for (Index n = 0; n < input.n(); ++n) {
            const Index o = input.offset(n, c, 0, 0);
            normalized.segment(o, plane) = (input.data().segment(o, plane) - mean) * inv_std[c];
            out.data().segment(o, plane) = g * normalized.segment(o, plane) + b;
        }
    }
    ensure_finite(out, "batch_norm");
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->mode = state.mode;
    }
    return out;
}

template <typename Scalar>
void batch_norm_backward(Tensor4<Scalar>& input, const Tensor4<Scalar>& output, BatchNormState<Scalar>& state,
                         const BatchNormCache<Scalar>& cache)
{
    const Index plane = input.h() * input.w();
    const Scalar count = Scalar(input.n() * plane);
    auto& din = input.grad();
    const auto& dout = output.grad();
    for (Index c = 0; c < input.c(); ++c) {
        Scalar sum_dy = 0, sum_dy_xhat = 0;
        for (Index n = 0; n < input.n(); ++n) {
            const Index o = input.offset(n, c, 0, 0);
            sum_dy += dout.segment(o, plane).sum();
            sum_dy_xhat += (dout.segment(o, plane) * cache.normalized.segment(o, plane)).sum();
        }
        state.affine.grad[c] += sum_dy_xhat;
        (*state.affine.bias_grad)[c] += sum_dy;
        const Scalar g = state.gamma()[c];
        for (Index n = 0; n < input.n(); ++n) {
            const Index o = input.offset(n, c, 0, 0);
            if (cache.mode == Mode::train) {
                din.segment(o, plane) += g * cache.inv_std[c] / count *
                                         (count * dout.segment(o, plane) - sum_dy -
                                          cache.normalized.segment(o, plane) * sum_dy_xhat);
            } else {
                din.segment(o, plane) += g * cache.inv_std[c] * dout.segment(o, plane);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations (subgradient 0 at the abs/relu kink)
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor4<Scalar> activation(const Tensor4<Scalar>& input, Activation kind, KinkMonitor* kinks = nullptr)
{
    Tensor4<Scalar> out(input.shape());
    switch (kind) {
    case Activation::abs:
        out.data() = input.data().abs();
        break;
    case Activation::tanh:
        out.data() = input.data().tanh();
        break;
    case Activation::relu:
        out.data() = input.data().max(Scalar(0));
        break;
    }
    if (kinks && kind != Activation::tanh) {
        kinks->record(input);
    }
    ensure_finite(out, "activation");
    return out;
}

template <typename Scalar>
void activation_backward(Tensor4<Scalar>& input, const Tensor4<Scalar>& output, Activation kind)
{
    const auto& x = input.data();
    const auto& dy = output.grad();
    auto& dx = input.grad();
    switch (kind) {
    case Activation::abs:
        dx += dy * ((x > 0).template cast<Scalar>() - (x < 0).template cast<Scalar>());
        break;
    case Activation::tanh:
        dx += dy * (Scalar(1) - output.data().square());
        break;
    case Activation::relu:
        dx += dy * (x > 0).template cast<Scalar>();
        break;
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor4<Scalar> pool(const Tensor4<Scalar>& input, const PoolSpec& spec)
{
    if (spec.kind == PoolKind::global_avg) {
        Tensor4<Scalar> out(input.n(), input.c(), 1, 1);
        const Index plane = input.h() * input.w();
        if (plane == 0) {
            throw ConfigError("pool: global average over an empty plane");
        }
        for (Index n = 0; n < input.n(); ++n) {
            for (Index c = 0; c < input.c(); ++c) {
                out(n, c, 0, 0) = input.data().segment(input.offset(n, c, 0, 0), plane).mean();
            }
        }
        return out;
    }
    if (spec.size <= 0 || spec.stride <= 0 || spec.padding < 0) {
        throw ConfigError("pool: size and stride must be positive");
    }
    const Index oh = detail::window_extent(input.h(), spec.size, spec.stride, spec.padding, "pool", false);
    const Index ow = detail::window_extent(input.w(), spec.size, spec.stride, spec.padding, "pool", false);
    Tensor4<Scalar> out(input.n(), input.c(), oh, ow);
    const Scalar scale = Scalar(1) / Scalar(spec.size * spec.size);
    const auto ys = detail::tap_table(oh, spec.size, spec.stride, spec.padding, input.h(), spec.pad_mode);
    const auto xs = detail::tap_table(ow, spec.size, spec.stride, spec.padding, input.w(), spec.pad_mode);
    // Separable: horizontal window sums per input row, then vertical sums.
    std::vector<Scalar> rows(static_cast<std::size_t>(input.h() * ow));
    for (Index n = 0; n < input.n(); ++n) {
        for (Index c = 0; c < input.c(); ++c) {
            const Scalar* src = input.data().data() + input.offset(n, c, 0, 0);
            for (Index iy = 0; iy < input.h(); ++iy) {
                Scalar* r = rows.data() + iy * ow;
                std::fill(r, r + ow, Scalar(0));
                for (Index kx = 0; kx < spec.size; ++kx) {
                    const Index* xk = xs.data() + kx * ow;
                    for (Index ox = 0; ox < ow; ++ox) {
                        if (xk[ox] >= 0) {
                            r[ox] += src[iy * input.w() + xk[ox]];
                        }
                    }
                }
            }
            Scalar* dst = out.data().data() + out.offset(n, c, 0, 0);
            for (Index oy = 0; oy < oh; ++oy) {
                Scalar* o = dst + oy * ow;
                for (Index ky = 0; ky < spec.size; ++ky) {
                    const Index iy = ys[static_cast<std::size_t>(ky * oh + oy)];
                    if (iy < 0) {
                        continue;
                    }
                    const Scalar* r = rows.data() + iy * ow;
                    for (Index ox = 0; ox < ow; ++ox) {
                        o[ox] += r[ox];
                    }
                }
                for (Index ox = 0; ox < ow; ++ox) {
                    o[ox] *= scale;
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
void pool_backward(Tensor4<Scalar>& input, const Tensor4<Scalar>& output, const PoolSpec& spec)
{
    auto& dx = input.grad();
    const auto& dy = output.grad();
    if (spec.kind == PoolKind::global_avg) {
        const Index plane = input.h() * input.w();
        for (Index n = 0; n < input.n(); ++n) {
            for (Index c = 0; c < input.c(); ++c) {
                dx.segment(input.offset(n, c, 0, 0), plane) += dy[output.offset(n, c, 0, 0)] / Scalar(plane);
            }
        }
        return;
    }
    const Scalar scale = Scalar(1) / Scalar(spec.size * spec.size);
    const Index oh = output.h(), ow = output.w();
    const auto ys = detail::tap_table(oh, spec.size, spec.stride, spec.padding, input.h(), spec.pad_mode);
    const auto xs = detail::tap_table(ow, spec.size, spec.stride, spec.padding, input.w(), spec.pad_mode);
    std::vector<Scalar> rows(static_cast<std::size_t>(input.h() * ow));
    for (Index n = 0; n < input.n(); ++n) {
        for (Index c = 0; c < input.c(); ++c) {
            // Transpose of the vertical pass, then of the horizontal pass.
            std::fill(rows.begin(), rows.end(), Scalar(0));
            const Scalar* g = dy.data() + output.offset(n, c, 0, 0);
            for (Index oy = 0; oy < oh; ++oy) {
                for (Index ky = 0; ky < spec.size; ++ky) {
                    const Index iy = ys[static_cast<std::size_t>(ky * oh + oy)];
                    if (iy < 0) {
                        continue;
                    }
                    Scalar* r = rows.data() + iy * ow;
                    for (Index ox = 0; ox < ow; ++ox) {
                        r[ox] += g[oy * ow + ox] * scale;
                    }
                }
            }
            Scalar* d = dx.data() + input.offset(n, c, 0, 0);
            for (Index iy = 0; iy < input.h(); ++iy) {
                const Scalar* r = rows.data() + iy * ow;
                for (Index kx = 0; kx < spec.size; ++kx) {
                    const Index* xk = xs.data() + kx * ow;
                    for (Index ox = 0; ox < ow; ++ox) {
                        if (xk[ox] >= 0) {
                            d[iy * input.w() + xk[ox]] += r[ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Two-way classifier head: dense -> softmax -> negative log-likelihood
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-12;

template <typename Scalar>
struct NllResult {
    Scalar loss = 0;
    Index clamp_count = 0;
};

/// Batch-mean of -y log f - (1-y) log(1-f) with f the class-1 (stego) probability.
template <typename Scalar>
NllResult<Scalar> nll_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, 2>& probabilities, std::span<const int> labels)
{
    if (probabilities.rows() != static_cast<Index>(labels.size()) || labels.empty()) {
        throw DimensionError("nll_loss: " + std::to_string(probabilities.rows()) + " predictions for " +
                             std::to_string(labels.size()) + " labels");
    }
    const Scalar lo = Scalar(kProbabilityClamp), hi = Scalar(1) - Scalar(kProbabilityClamp);
    NllResult<Scalar> r;
    Scalar sum = 0;
    for (Index i = 0; i < probabilities.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y != 0 && y != 1) {
            throw ConfigError("nll_loss: label must be 0 or 1, got " + std::to_string(y));
        }
        Scalar f = probabilities(i, 1);
        if (f < lo || f > hi) {
            ++r.clamp_count;
            f = std::clamp(f, lo, hi);
        }
        sum += y == 1 ? -std::log(f) : -std::log(Scalar(1) - f);
    }
    r.loss = sum / Scalar(probabilities.rows());
    return r;
}

template <typename Scalar>
struct DenseNllResult {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> probabilities;
    Scalar loss = 0;
    Index clamp_count = 0;
};

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 2> dense_softmax(const Tensor4<Scalar>& features, const LayerParams<Scalar>& params)
{
    const Index n = features.n(), d = features.shape().sample();
    if (params.kind != LayerKind::dense || params.shape.size() != 2 || params.shape[0] != 2 || params.shape[1] != d) {
        throw DimensionError("dense_softmax_nll: expected dense weights (2, " + std::to_string(d) + ")");
    }
    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> x(features.data().data(), n, d);
    Eigen::Map<const RowMat> weights(params.weights.data(), 2, d);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> logits = x * weights.transpose();
    logits.rowwise() += params.bias->matrix().transpose();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> probs(n, 2);
    for (Index i = 0; i < n; ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        const Scalar e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
        probs(i, 0) = e0 / (e0 + e1);
        probs(i, 1) = e1 / (e0 + e1);
    }
    if (!probs.allFinite()) {
        throw NumericError("dense_softmax_nll: non-finite probabilities");
    }
    return probs;
}

template <typename Scalar>
DenseNllResult<Scalar> dense_softmax_nll(const Tensor4<Scalar>& features, const LayerParams<Scalar>& params,
                                         std::span<const int> labels)
{
    DenseNllResult<Scalar> r;
    r.probabilities = dense_softmax(features, params);
    const auto nll = nll_loss<Scalar>(r.probabilities, labels);
    r.loss = nll.loss;
    r.clamp_count = nll.clamp_count;
    return r;
}

/// Backward of `scale * dense_softmax_nll(...).loss`.
template <typename Scalar>
void dense_softmax_nll_backward(Tensor4<Scalar>& features, LayerParams<Scalar>& params,
                                const DenseNllResult<Scalar>& result, std::span<const int> labels, Scalar scale)
{
    const Index n = features.n(), d = features.shape().sample();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 2> dlogits = result.probabilities;
    for (Index i = 0; i < n; ++i) {
        dlogits(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    }
    dlogits *= scale / Scalar(n);

    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> x(features.data().data(), n, d);
    Eigen::Map<const RowMat> weights(params.weights.data(), 2, d);
    Eigen::Map<RowMat> dweights(params.grad.data(), 2, d);
    dweights.noalias() += dlogits.transpose() * x;
    params.bias_grad->matrix() += dlogits.colwise().sum().transpose();
    Eigen::Map<RowMat> dx(features.grad().data(), n, d);
    dx.noalias() += dlogits * weights;
}

// ---------------------------------------------------------------------------
// Robust L1 reconstruction loss
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar smooth_l1_element(Scalar d)
{
    const Scalar a = std::abs(d);
    return a < Scalar(1) ? Scalar(0.5) * d * d : a - Scalar(0.5);
}

template <typename Scalar>
Scalar smooth_l1_derivative(Scalar d)
{
    if (std::abs(d) < Scalar(1)) {
        return d;
    }
    return d > 0 ? Scalar(1) : Scalar(-1);
}

/// Per-image mean over its m elements, then mean over the batch.
template <typename Scalar>
Scalar smooth_l1(const Tensor4<Scalar>& pred, const Tensor4<Scalar>& target)
{
    ensure_same_shape(pred, target, "smooth_l1");
    if (pred.size() == 0) {
        throw DimensionError("smooth_l1: empty input");
    }
    const Index m = pred.shape().sample();
    Scalar batch = 0;
    for (Index n = 0; n < pred.n(); ++n) {
        Scalar image = 0;
        for (Index j = 0; j < m; ++j) {
            image += smooth_l1_element(pred.data()[n * m + j] - target.data()[n * m + j]);
        }
        batch += image / Scalar(m);
    }
    return batch / Scalar(pred.n());
}

/// Accumulates the gradient of `scale * smooth_l1(pred, target)` into pred.grad().
template <typename Scalar>
void smooth_l1_backward(Tensor4<Scalar>& pred, const Tensor4<Scalar>& target, Scalar scale)
{
    const Scalar norm = scale / Scalar(pred.size());
    auto& g = pred.grad();
    for (Index i = 0; i < pred.size(); ++i) {
        g[i] += norm * smooth_l1_derivative(pred.data()[i] - target.data()[i]);
    }
}

} // namespace steglearn
