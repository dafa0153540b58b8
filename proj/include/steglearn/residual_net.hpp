#pragma once

// Trainable residual extraction: one convolutional layer with two kernels
// (5x5 and 3x3) reconstructs the cover from the input, and the residuals are
// the input minus each reconstruction.

#include "steglearn/layers.hpp"
#include "steglearn/ops.hpp"
#include "steglearn/tensor.hpp"

#include <array>

namespace steglearn {

template <typename Scalar>
struct ResidualNetParams {
    LayerParams<Scalar> k5 = LayerParams<Scalar>::conv(1, 1, 5, 5);
    LayerParams<Scalar> k3 = LayerParams<Scalar>::conv(1, 1, 3, 3);
};

template <typename Scalar>
struct ResidualOutput {
    Tensor4<Scalar> recon5;
    Tensor4<Scalar> recon3;
    Tensor4<Scalar> res5;
    Tensor4<Scalar> res3;
};

/// Initial 5x5 kernel numerators; scaled by 1/12. It is the KV high-pass
/// kernel with its centre zeroed, so the residual x - k5*x is -KV*x.
inline constexpr std::array<double, 25> kInitK5Numerators = {
    -1, 2,  -2, 2,  -1, //
    2,  -6, 8,  -6, 2,  //
    -2, 8,  0,  8,  -2, //
    2,  -6, 8,  -6, 2,  //
    -1, 2,  -2, 2,  -1,
};

/// Initial 3x3 kernel numerators; scaled by 1/4.
inline constexpr std::array<double, 9> kInitK3Numerators = {
    -1, 2, -1, //
    2,  0, 2,  //
    -1, 2, -1,
};

/// The fixed KV high-pass kernel numerators (scaled by 1/12).
inline constexpr std::array<double, 25> kKvNumerators = {
    -1, 2,  -2,  2,  -1, //
    2,  -6, 8,   -6, 2,  //
    -2, 8,  -12, 8,  -2, //
    2,  -6, 8,   -6, 2,  //
    -1, 2,  -2,  2,  -1,
};

template <typename Scalar>
ResidualNetParams<Scalar> init_residual_params()
{
    ResidualNetParams<Scalar> p;
    for (Index i = 0; i < 25; ++i) {
        p.k5.weights[i] = Scalar(kInitK5Numerators[static_cast<std::size_t>(i)] / 12.0);
    }
    for (Index i = 0; i < 9; ++i) {
        p.k3.weights[i] = Scalar(kInitK3Numerators[static_cast<std::size_t>(i)] / 4.0);
    }
    return p;
}

/**
 * x - k*x evaluated as sum_i w_i (x_p - x_{p+i}) + (1 - sum w) x_p with
 * replicate padding. Same function, but the differences are taken before the
 * weighting, so there is no cancellation and a flat region leaves only the
 * kernel-sum defect term (exactly 0 when the weights sum to exactly 1).
 */
template <typename Scalar>
Tensor4<Scalar> difference_residual(const Tensor4<Scalar>& x, const LayerParams<Scalar>& k)
{
    const Index kh = k.shape[2], kw = k.shape[3], h = x.h(), w = x.w();
    const auto taps = detail::conv_taps(h, w, kh, kw, h, w, same_conv(kh));
    Scalar sum = 0;
    for (Index i = 0; i < k.weights.size(); ++i) {
        sum += k.weights[i];
    }
    const Scalar defect = Scalar(1) - sum;
    Tensor4<Scalar> res(x.shape());
    for (Index n = 0; n < x.n(); ++n) {
        const Scalar* src = x.data().data() + x.offset(n, 0, 0, 0);
        Scalar* dst = res.data().data() + res.offset(n, 0, 0, 0);
        for (Index y = 0; y < h; ++y) {
            for (Index xx = 0; xx < w; ++xx) {
                const Scalar centre = src[y * w + xx];
                Scalar acc = 0;
                for (Index ky = 0; ky < kh; ++ky) {
                    const Scalar* row = src + taps.rows[static_cast<std::size_t>(ky * h + y)] * w;
                    for (Index kx = 0; kx < kw; ++kx) {
                        acc += k.weights[ky * kw + kx] * (centre - row[taps.cols[static_cast<std::size_t>(kx * w + xx)]]);
                    }
                }
                dst[y * w + xx] = acc + defect * centre;
            }
        }
    }
    return res;
}

template <typename Scalar>
ResidualOutput<Scalar> residual_forward(const Tensor4<Scalar>& x, const ResidualNetParams<Scalar>& params)
{
    if (x.c() != 1) {
        throw DimensionError("residual_forward: expected a single-channel input, got " + std::to_string(x.c()) +
                             " channels");
    }
    if (x.h() < 5 || x.w() < 5) {
        throw DimensionError("residual_forward: spatial extent must be at least 5x5, got " + x.shape().str());
    }
    ResidualOutput<Scalar> out;
    out.res5 = difference_residual(x, params.k5);
    out.res3 = difference_residual(x, params.k3);
    out.recon5 = Tensor4<Scalar>(x.shape());
    out.recon5.data() = x.data() - out.res5.data();
    out.recon3 = Tensor4<Scalar>(x.shape());
    out.recon3.data() = x.data() - out.res3.data();
    return out;
}

/// Mean of the robust L1 losses of the two reconstructions against the cover.
template <typename Scalar>
Scalar reconstruction_loss(const ResidualOutput<Scalar>& out, const Tensor4<Scalar>& cover)
{
    return Scalar(0.5) * (smooth_l1(out.recon5, cover) + smooth_l1(out.recon3, cover));
}

template <typename Scalar>
void reconstruction_loss_backward(ResidualOutput<Scalar>& out, const Tensor4<Scalar>& cover, Scalar scale)
{
    smooth_l1_backward(out.recon5, cover, Scalar(0.5) * scale);
    smooth_l1_backward(out.recon3, cover, Scalar(0.5) * scale);
}

/// Channel-stacks (res5, res3) into an (n, 2, h, w) classifier input.
template <typename Scalar>
Tensor4<Scalar> stack_residuals(const ResidualOutput<Scalar>& out)
{
    const Shape4 s = out.res5.shape();
    Tensor4<Scalar> stacked(s.n, 2, s.h, s.w);
    const Index plane = s.h * s.w;
    for (Index n = 0; n < s.n; ++n) {
        stacked.data().segment(stacked.offset(n, 0, 0, 0), plane) = out.res5.data().segment(n * plane, plane);
        stacked.data().segment(stacked.offset(n, 1, 0, 0), plane) = out.res3.data().segment(n * plane, plane);
    }
    return stacked;
}

/// Routes the stacked-input gradient back onto res5.grad and res3.grad.
template <typename Scalar>
void unstack_residual_grad(const Tensor4<Scalar>& stacked, ResidualOutput<Scalar>& out)
{
    const Index plane = stacked.h() * stacked.w();
    auto& g5 = out.res5.grad();
    auto& g3 = out.res3.grad();
    for (Index n = 0; n < stacked.n(); ++n) {
        g5.segment(n * plane, plane) += stacked.grad().segment(stacked.offset(n, 0, 0, 0), plane);
        g3.segment(n * plane, plane) += stacked.grad().segment(stacked.offset(n, 1, 0, 0), plane);
    }
}

/**
 * Backward through the subtraction and both convolutions. When
 * `include_residual_path` is false the gradient arriving on the residual maps
 * is dropped, so the kernels only see the reconstruction loss.
 */
template <typename Scalar>
void residual_backward(Tensor4<Scalar>& x, ResidualOutput<Scalar>& out, ResidualNetParams<Scalar>& params,
                       bool include_residual_path = true, bool propagate_to_input = false)
{
    auto& g5 = out.recon5.grad();
    auto& g3 = out.recon3.grad();
    if (include_residual_path) {
        if (out.res5.has_grad()) {
            g5 -= out.res5.grad();
            if (propagate_to_input) {
                x.grad() += out.res5.grad();
            }
        }
        if (out.res3.has_grad()) {
            g3 -= out.res3.grad();
            if (propagate_to_input) {
                x.grad() += out.res3.grad();
            }
        }
    }
    conv2d_backward(x, out.recon5, params.k5, same_conv(5), propagate_to_input);
    conv2d_backward(x, out.recon3, params.k3, same_conv(3), propagate_to_input);
}

} // namespace steglearn
