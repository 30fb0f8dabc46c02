#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace heterofl {

/// Half-open index range [begin, end) on one tensor axis.
struct AxisRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  constexpr std::size_t length() const { return end - begin; }
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

/// Full range over an axis of the given size.
constexpr AxisRange full_range(std::size_t dim) { return AxisRange{0, dim}; }

/// Dense row-major n-dimensional array. Last axis is fastest.
///
/// Instantiated for float and double; double is the test/oracle precision,
/// float the cheap training precision. A tensor shared across threads is
/// treated as immutable; mutation happens only on uniquely owned tensors.
template <class S>
class TensorT {
 public:
  using value_type = S;

  TensorT() = default;
  /// Zero-filled tensor. Every dimension must be >= 1.
  explicit TensorT(std::vector<std::size_t> shape);
  TensorT(std::vector<std::size_t> shape, std::vector<S> values);

  static TensorT full(std::vector<std::size_t> shape, S value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }

  S& operator[](std::size_t flat) { return data_[flat]; }
  const S& operator[](std::size_t flat) const { return data_[flat]; }

  /// Bounds-checked multi-index access (test/debug convenience).
  S& at(std::initializer_list<std::size_t> idx);
  const S& at(std::initializer_list<std::size_t> idx) const;

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  /// Dense copy of the region selected by one range per axis.
  /// Throws std::invalid_argument naming the offending axis when a range
  /// exceeds the axis bound.
  TensorT slice_read(std::span<const AxisRange> ranges) const;

  /// Replaces the region selected by `ranges` with `src`; src shape must
  /// equal the range lengths. All other elements are untouched.
  void slice_write(std::span<const AxisRange> ranges, const TensorT& src);

  void fill(S v);
  void add_(const TensorT& other);            // this += other
  void sub_(const TensorT& other);            // this -= other
  void scale_(S a);                           // this *= a
  void hadamard_(const TensorT& other);       // this *= other, element-wise
  void axpy_(S a, const TensorT& x);          // this += a * x

  bool all_finite() const;

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_ranges(std::span<const AxisRange> ranges) const;

  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> scale(const TensorT<S>& a, S s);
template <class S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b);

/// [m,k] x [k,n] -> [m,n].
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);

/// C (+)= A(MxK) * B(KxN); all row-major contiguous. accumulate=false zeroes C first.
template <class S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate = false);

/// C (+)= A(MxK) * B(NxK)^T.
template <class S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate = false);

/// C (+)= A(KxM)^T * B(KxN).
template <class S>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate = false);

/// Geometry of a 2-D convolution / pooling window sweep.
struct Conv2dGeom {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
  std::size_t patch() const { return in_c * kernel_h * kernel_w; }
};

/// Unfolds one batch of images [n, C, H, W] into the patch matrix
/// [patch, n * out_h * out_w]; out-of-image taps contribute zero.
template <class S>
void im2col(const S* images, std::size_t n, const Conv2dGeom& g, S* col);

/// Scatter-add inverse of im2col.
template <class S>
void col2im(const S* col, std::size_t n, const Conv2dGeom& g, S* images);

/// Reference-grade convolution: x [n, C, H, W], w [OC, C, kh, kw] -> [n, OC, oh, ow].
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* bias,
                  std::size_t stride, std::size_t pad);

}  // namespace heterofl
