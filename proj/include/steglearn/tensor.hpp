#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace steglearn {

#ifdef STEGLEARN_USE_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Shape4 {
    Index n = 0;
    Index c = 0;
    Index h = 0;
    Index w = 0;

    Index size() const { return n * c * h * w; }
    Index plane() const { return h * w; }
    Index sample() const { return c * h * w; }

    friend bool operator==(const Shape4&, const Shape4&) = default;

    std::string str() const
    {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
               std::to_string(h) + ", " + std::to_string(w) + ")";
    }
};

/**
 * Dense (batch, channel, height, width) array, row-major within each sample,
 * with an optional gradient buffer of identical shape.
 */
template <typename Scalar>
class Tensor4 {
  public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstPlaneMap =
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Tensor4() = default;

    explicit Tensor4(Shape4 shape) : shape_{shape}, data_{Array::Zero(checked_size(shape))} {}

    Tensor4(Index n, Index c, Index h, Index w) : Tensor4(Shape4{n, c, h, w}) {}

    static Tensor4 constant(Shape4 shape, Scalar value)
    {
        Tensor4 t(shape);
        t.data_.setConstant(value);
        return t;
    }

    const Shape4& shape() const { return shape_; }
    Index n() const { return shape_.n; }
    Index c() const { return shape_.c; }
    Index h() const { return shape_.h; }
    Index w() const { return shape_.w; }
    Index size() const { return shape_.size(); }

    Array& data() { return data_; }
    const Array& data() const { return data_; }

    Scalar& operator()(Index n, Index c, Index y, Index x) { return data_[offset(n, c, y, x)]; }
    Scalar operator()(Index n, Index c, Index y, Index x) const { return data_[offset(n, c, y, x)]; }

    Index offset(Index n, Index c, Index y, Index x) const
    {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    /// Row-major (h, w) view of one channel of one sample.
    PlaneMap plane(Index n, Index c) { return PlaneMap(data_.data() + offset(n, c, 0, 0), shape_.h, shape_.w); }
    ConstPlaneMap plane(Index n, Index c) const
    {
        return ConstPlaneMap(data_.data() + offset(n, c, 0, 0), shape_.h, shape_.w);
    }

    bool has_grad() const { return grad_.has_value(); }

    /// Gradient buffer, zero-allocated on first access.
    Array& grad()
    {
        if (!grad_) {
            grad_ = Array::Zero(size());
        }
        return *grad_;
    }

    const Array& grad() const
    {
        if (!grad_) {
            throw std::logic_error("Tensor4: gradient requested before it was allocated");
        }
        return *grad_;
    }

    void zero_grad() { grad_.reset(); }

    bool all_finite() const { return data_.isFinite().all(); }

  private:
    static Index checked_size(const Shape4& s)
    {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
            throw DimensionError("Tensor4: negative extent in " + s.str());
        }
        return s.size();
    }

    Shape4 shape_{};
    Array data_{};
    std::optional<Array> grad_{};
};

/// Throws NumericError when `t` holds NaN or Inf; `where` names the producing op.
template <typename Scalar>
void ensure_finite(const Tensor4<Scalar>& t, const std::string& where)
{
    if (!t.all_finite()) {
        throw NumericError(where + ": non-finite value in output " + t.shape().str());
    }
}

template <typename Scalar>
void ensure_same_shape(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b, const std::string& where)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(where + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

} // namespace steglearn
