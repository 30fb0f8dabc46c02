#include "heterofl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace heterofl {

namespace {

std::size_t checked_volume(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      std::ostringstream os;
      os << "tensor dimension " << i << " must be >= 1";
      throw std::invalid_argument(os.str());
    }
    n *= shape[i];
  }
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace

template <class S>
TensorT<S>::TensorT(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_volume(shape_), S(0)) {}

template <class S>
TensorT<S>::TensorT(std::vector<std::size_t> shape, std::vector<S> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (checked_volume(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

template <class S>
TensorT<S> TensorT<S>::full(std::vector<std::size_t> shape, S value) {
  TensorT t(std::move(shape));
  t.fill(value);
  return t;
}

template <class S>
S& TensorT<S>::at(std::initializer_list<std::size_t> idx) {
  return const_cast<S&>(std::as_const(*this).at(idx));
}

template <class S>
const S& TensorT<S>::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw std::invalid_argument("index rank mismatch");
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw std::out_of_range("index " + std::to_string(i) + " out of bounds on axis " +
                              std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return data_[flat];
}

template <class S>
void TensorT<S>::check_ranges(std::span<const AxisRange> ranges) const {
  if (ranges.size() != shape_.size()) {
    throw std::invalid_argument("slice rank " + std::to_string(ranges.size()) +
                                " does not match tensor rank " + std::to_string(shape_.size()));
  }
  for (std::size_t axis = 0; axis < ranges.size(); ++axis) {
    const auto& r = ranges[axis];
    if (r.begin > r.end || r.end > shape_[axis] || r.length() == 0) {
      std::ostringstream os;
      os << "slice range [" << r.begin << "," << r.end << ") invalid on axis " << axis
         << " (size " << shape_[axis] << ")";
      throw std::invalid_argument(os.str());
    }
  }
}

template <class S>
TensorT<S> TensorT<S>::slice_read(std::span<const AxisRange> ranges) const {
  check_ranges(ranges);
  const std::size_t rank = shape_.size();
  std::vector<std::size_t> out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = ranges[i].length();
  TensorT out(std::move(out_shape));

  // Copy innermost-axis runs; odometer over the remaining axes.
  const std::size_t run = ranges[rank - 1].length();
  std::vector<std::size_t> stride(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) stride[i - 1] = stride[i] * shape_[i];

  std::vector<std::size_t> idx(rank, 0);  // position within each range, last axis unused
  S* dst = out.data();
  for (;;) {
    std::size_t src_off = ranges[rank - 1].begin;
    for (std::size_t i = 0; i + 1 < rank; ++i) src_off += (ranges[i].begin + idx[i]) * stride[i];
    std::memcpy(dst, data_.data() + src_off, run * sizeof(S));
    dst += run;

    std::size_t axis = rank - 1;
    while (axis > 0) {
      --axis;
      if (++idx[axis] < ranges[axis].length()) break;
      idx[axis] = 0;
      if (axis == 0) return out;
    }
    if (rank == 1) return out;
  }
}

template <class S>
void TensorT<S>::slice_write(std::span<const AxisRange> ranges, const TensorT& src) {
  check_ranges(ranges);
  const std::size_t rank = shape_.size();
  if (src.rank() != rank) throw std::invalid_argument("slice_write source rank mismatch");
  for (std::size_t i = 0; i < rank; ++i) {
    if (src.dim(i) != ranges[i].length()) {
      std::ostringstream os;
      os << "slice_write source shape " << shape_str(src.shape()) << " does not match range "
         << "length " << ranges[i].length() << " on axis " << i;
      throw std::invalid_argument(os.str());
    }
  }

  const std::size_t run = ranges[rank - 1].length();
  std::vector<std::size_t> stride(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) stride[i - 1] = stride[i] * shape_[i];

  std::vector<std::size_t> idx(rank, 0);
  const S* from = src.data();
  for (;;) {
    std::size_t dst_off = ranges[rank - 1].begin;
    for (std::size_t i = 0; i + 1 < rank; ++i) dst_off += (ranges[i].begin + idx[i]) * stride[i];
    std::memcpy(data_.data() + dst_off, from, run * sizeof(S));
    from += run;

    std::size_t axis = rank - 1;
    while (axis > 0) {
      --axis;
      if (++idx[axis] < ranges[axis].length()) break;
      idx[axis] = 0;
      if (axis == 0) return;
    }
    if (rank == 1) return;
  }
}

template <class S>
void TensorT<S>::fill(S v) {
  std::fill(data_.begin(), data_.end(), v);
}

namespace {
template <class S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}
}  // namespace

template <class S>
void TensorT<S>::add_(const TensorT& other) {
  require_same_shape(*this, other, "add");
  const S* __restrict__ o = other.data();
  S* __restrict__ d = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) d[i] += o[i];
}

template <class S>
void TensorT<S>::sub_(const TensorT& other) {
  require_same_shape(*this, other, "sub");
  const S* __restrict__ o = other.data();
  S* __restrict__ d = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) d[i] -= o[i];
}

template <class S>
void TensorT<S>::scale_(S a) {
  for (auto& v : data_) v *= a;
}

template <class S>
void TensorT<S>::hadamard_(const TensorT& other) {
  require_same_shape(*this, other, "hadamard");
  const S* __restrict__ o = other.data();
  S* __restrict__ d = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) d[i] *= o[i];
}

template <class S>
void TensorT<S>::axpy_(S a, const TensorT& x) {
  require_same_shape(*this, x, "axpy");
  const S* __restrict__ o = x.data();
  S* __restrict__ d = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) d[i] += a * o[i];
}

template <class S>
bool TensorT<S>::all_finite() const {
  for (S v : data_)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  TensorT<S> out = a;
  out.add_(b);
  return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S s) {
  TensorT<S> out = a;
  out.scale_(s);
  return out;
}

template <class S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b) {
  TensorT<S> out = a;
  out.hadamard_(b);
  return out;
}

// ---------------------------------------------------------------------------
// GEMM kernels. All loops keep a fixed summation order so results are
// bit-identical across runs and thread counts. The inner loops are written as
// axpy sweeps over contiguous rows, which the compiler vectorizes without
// reassociating any reduction.
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kColBlock = 1024;  // j-tile kept hot in L1/L2
constexpr std::size_t kDepthBlock = 256; // k-tile
}  // namespace

template <class S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(S));
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t j1 = std::min(n, j0 + kColBlock);
    for (std::size_t k0 = 0; k0 < k; k0 += kDepthBlock) {
      const std::size_t k1 = std::min(k, k0 + kDepthBlock);
      std::size_t i = 0;
      // Four C rows per sweep: each B row is loaded once for all four.
      for (; i + 3 < m; i += 4) {
        const S* __restrict__ a0 = a + i * k;
        const S* __restrict__ a1 = a + (i + 1) * k;
        const S* __restrict__ a2 = a + (i + 2) * k;
        const S* __restrict__ a3 = a + (i + 3) * k;
        S* __restrict__ c0 = c + i * n;
        S* __restrict__ c1 = c + (i + 1) * n;
        S* __restrict__ c2 = c + (i + 2) * n;
        S* __restrict__ c3 = c + (i + 3) * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const S av0 = a0[kk];
          const S av1 = a1[kk];
          const S av2 = a2[kk];
          const S av3 = a3[kk];
          const S* __restrict__ br = b + kk * n;
          for (std::size_t j = j0; j < j1; ++j) {
            c0[j] += av0 * br[j];
            c1[j] += av1 * br[j];
            c2[j] += av2 * br[j];
            c3[j] += av3 * br[j];
          }
        }
      }
      for (; i < m; ++i) {
        const S* __restrict__ ar = a + i * k;
        S* __restrict__ cr = c + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const S av = ar[kk];
          const S* __restrict__ br = b + kk * n;
          for (std::size_t j = j0; j < j1; ++j) cr[j] += av * br[j];
        }
      }
    }
  }
}

template <class S>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(S));
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t j1 = std::min(n, j0 + kColBlock);
    for (std::size_t k0 = 0; k0 < k; k0 += kDepthBlock) {
      const std::size_t k1 = std::min(k, k0 + kDepthBlock);
      std::size_t i = 0;
      for (; i + 3 < m; i += 4) {
        S* __restrict__ c0 = c + i * n;
        S* __restrict__ c1 = c + (i + 1) * n;
        S* __restrict__ c2 = c + (i + 2) * n;
        S* __restrict__ c3 = c + (i + 3) * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const S* __restrict__ ar = a + kk * m + i;
          const S av0 = ar[0];
          const S av1 = ar[1];
          const S av2 = ar[2];
          const S av3 = ar[3];
          const S* __restrict__ br = b + kk * n;
          for (std::size_t j = j0; j < j1; ++j) {
            c0[j] += av0 * br[j];
            c1[j] += av1 * br[j];
            c2[j] += av2 * br[j];
            c3[j] += av3 * br[j];
          }
        }
      }
      for (; i < m; ++i) {
        S* __restrict__ cr = c + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const S av = a[kk * m + i];
          const S* __restrict__ br = b + kk * n;
          for (std::size_t j = j0; j < j1; ++j) cr[j] += av * br[j];
        }
      }
    }
  }
}

template <class S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const S* a, const S* b, S* c, bool accumulate) {
  // Transpose B (n x k) once, then run the nn kernel.
  std::vector<S> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    const S* __restrict__ br = b + j * k;
    for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = br[kk];
  }
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.dim(1)) +
                                " vs " + std::to_string(b.dim(0)) + ")");
  }
  TensorT<S> c({a.dim(0), b.dim(1)});
  gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data(), false);
  return c;
}

template <class S>
void im2col(const S* images, std::size_t n, const Conv2dGeom& g, S* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t positions = n * oh * ow;
  const std::size_t img = g.in_c * g.in_h * g.in_w;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        S* __restrict__ row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * positions;
        for (std::size_t b = 0; b < n; ++b) {
          const S* __restrict__ src = images + b * img + c * g.in_h * g.in_w;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            S* __restrict__ out = row + (b * oh + oy) * ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
              std::memset(out, 0, ow * sizeof(S));
              continue;
            }
            const S* line = src + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                            ? S(0)
                            : line[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

template <class S>
void col2im(const S* col, std::size_t n, const Conv2dGeom& g, S* images) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t positions = n * oh * ow;
  const std::size_t img = g.in_c * g.in_h * g.in_w;
  std::memset(images, 0, n * img * sizeof(S));
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const S* __restrict__ row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * positions;
        for (std::size_t b = 0; b < n; ++b) {
          S* __restrict__ dst = images + b * img + c * g.in_h * g.in_w;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const S* in = row + (b * oh + oy) * ow;
            S* line = dst + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w))
                line[static_cast<std::size_t>(ix)] += in[ox];
            }
          }
        }
      }
    }
  }
}

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* bias,
                  std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d expects rank-4 tensors");
  if (x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(1)) +
                                " do not match kernel channels " + std::to_string(w.dim(1)));
  }
  Conv2dGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad};
  const std::size_t n = x.dim(0), oc = w.dim(0);
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t positions = n * oh * ow;

  std::vector<S> col(g.patch() * positions);
  im2col(x.data(), n, g, col.data());

  // y_mat [oc, positions] laid out as [b, oy, ox] per row segment -> reorder to [n, oc, oh, ow].
  std::vector<S> ymat(oc * positions);
  gemm_nn(oc, positions, g.patch(), w.data(), col.data(), ymat.data(), false);

  TensorT<S> y({n, oc, oh, ow});
  for (std::size_t o = 0; o < oc; ++o) {
    const S bval = bias ? (*bias)[o] : S(0);
    for (std::size_t b = 0; b < n; ++b) {
      const S* src = ymat.data() + o * positions + b * oh * ow;
      S* dst = y.data() + (b * oc + o) * oh * ow;
      for (std::size_t p = 0; p < oh * ow; ++p) dst[p] = src[p] + bval;
    }
  }
  return y;
}

// Explicit instantiations: double for tests/oracles, float for training runs.
#define HETEROFL_INSTANTIATE(S)                                                          \
  template class TensorT<S>;                                                             \
  template TensorT<S> add(const TensorT<S>&, const TensorT<S>&);                         \
  template TensorT<S> scale(const TensorT<S>&, S);                                       \
  template TensorT<S> hadamard(const TensorT<S>&, const TensorT<S>&);                    \
  template TensorT<S> matmul(const TensorT<S>&, const TensorT<S>&);                      \
  template void gemm_nn(std::size_t, std::size_t, std::size_t, const S*, const S*, S*, bool); \
  template void gemm_nt(std::size_t, std::size_t, std::size_t, const S*, const S*, S*, bool); \
  template void gemm_tn(std::size_t, std::size_t, std::size_t, const S*, const S*, S*, bool); \
  template void im2col(const S*, std::size_t, const Conv2dGeom&, S*);                    \
  template void col2im(const S*, std::size_t, const Conv2dGeom&, S*);                    \
  template TensorT<S> conv2d(const TensorT<S>&, const TensorT<S>&, const TensorT<S>*,    \
                             std::size_t, std::size_t);

HETEROFL_INSTANTIATE(float)
HETEROFL_INSTANTIATE(double)
#undef HETEROFL_INSTANTIATE

}  // namespace heterofl
