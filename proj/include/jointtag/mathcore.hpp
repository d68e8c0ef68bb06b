#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointtag {

struct ShapeError : std::logic_error {
  explicit ShapeError(const std::string& msg) : std::logic_error(msg) {}
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

// Dense row-major matrix of a scalar type. float in production; double for
// oracle shadows. Dot products accumulate in double regardless of T.
template <class T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, T{}) {}
  Mat(std::size_t r, std::size_t c, std::vector<T> data)
      : rows(r), cols(c), a(std::move(data)) {
    require_shape(a.size() == rows * cols, "Mat: data length != rows*cols");
  }

  T& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::span<T> row(std::size_t i) { return {a.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {a.data() + i * cols, cols}; }

  void fill(T v) { a.assign(a.size(), v); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

template <class T>
using Vec = std::vector<T>;

// ---------------------------------------------------------------------------
// Reference kernels: explicit loops, double accumulation.
// ---------------------------------------------------------------------------

template <class T>
Vec<T> matvec(const Mat<T>& m, const Vec<T>& v) {
  require_shape(m.cols == v.size(), "matvec: m.cols != v.dim");
  Vec<T> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    const T* row = m.a.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) acc += static_cast<double>(row[j]) * v[j];
    out[i] = static_cast<T>(acc);
  }
  return out;
}

template <class T>
Vec<T> sigmoid(const Vec<T>& v) {
  Vec<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v[i]))));
  return out;
}

template <class T>
Vec<T> tanh_act(const Vec<T>& v) {
  Vec<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<T>(std::tanh(static_cast<double>(v[i])));
  return out;
}

template <class T>
Vec<T> hadamard(const Vec<T>& a, const Vec<T>& b) {
  require_shape(a.size() == b.size(), "hadamard: dim mismatch");
  Vec<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <class T>
Vec<T> add(const Vec<T>& a, const Vec<T>& b) {
  require_shape(a.size() == b.size(), "add: dim mismatch");
  Vec<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

// Max-subtracted softmax; outputs sum to 1 within float rounding.
template <class T>
Vec<T> softmax(const Vec<T>& v) {
  require_shape(!v.empty(), "softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (T x : v) mx = std::max(mx, static_cast<double>(x));
  Vec<T> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double e = std::exp(static_cast<double>(v[i]) - mx);
    out[i] = static_cast<T>(e);
    sum += e;
  }
  for (auto& x : out) x = static_cast<T>(static_cast<double>(x) / sum);
  return out;
}

template <class T>
Vec<T> concat(const Vec<T>& a, const Vec<T>& b) {
  Vec<T> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// ---------------------------------------------------------------------------
// Batched matrix-matrix kernels used by the training path. Each output
// element accumulates in double within one call; results must agree with the
// reference kernels within 1e-5 relative (they agree to ~1e-7 in practice).
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<double>& scratch_row(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}
}  // namespace detail

// C (+)= A * B with A: m x k, B: k x n.
template <class T>
void matmul_nn(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  require_shape(a.cols == b.rows, "matmul_nn: inner dim mismatch");
  require_shape(c.rows == a.rows && c.cols == b.cols, "matmul_nn: output shape");
  const std::size_t n = b.cols;
  auto& acc = detail::scratch_row(n);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = static_cast<double>(a(i, k));
      const T* brow = b.a.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    T* crow = c.a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      crow[j] = accumulate ? static_cast<T>(static_cast<double>(crow[j]) + acc[j])
                           : static_cast<T>(acc[j]);
  }
}

// C (+)= A * B^T with A: m x k, B: n x k.
template <class T>
void matmul_nt(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  require_shape(a.cols == b.cols, "matmul_nt: inner dim mismatch");
  require_shape(c.rows == a.rows && c.cols == b.rows, "matmul_nt: output shape");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* arow = a.a.data() + i * a.cols;
    T* crow = c.a.data() + i * c.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* brow = b.a.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k)
        acc += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
      crow[j] = accumulate ? static_cast<T>(static_cast<double>(crow[j]) + acc)
                           : static_cast<T>(acc);
    }
  }
}

// C (+)= A^T * B with A: k x m, B: k x n.
template <class T>
void matmul_tn(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
  require_shape(a.rows == b.rows, "matmul_tn: inner dim mismatch");
  require_shape(c.rows == a.cols && c.cols == b.cols, "matmul_tn: output shape");
  const std::size_t n = b.cols;
  auto& acc = detail::scratch_row(n);
  for (std::size_t i = 0; i < a.cols; ++i) {
    for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
    for (std::size_t k = 0; k < a.rows; ++k) {
      const double aki = static_cast<double>(a(k, i));
      const T* brow = b.a.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aki * static_cast<double>(brow[j]);
    }
    T* crow = c.a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      crow[j] = accumulate ? static_cast<T>(static_cast<double>(crow[j]) + acc[j])
                           : static_cast<T>(acc[j]);
  }
}

// Lane id meaning "no input": the input column stays zero.
inline constexpr std::uint32_t kPadId = 0xffffffffu;

// C(:, b) += W(:, ids[b]). Equivalent to C += W * X with X the one-hot
// matrix whose column b is e_{ids[b]} (zero for kPadId); bit-identical to
// the dense product because every skipped term is an exact zero.
template <class T>
void add_onehot_columns(Mat<T>& c, const Mat<T>& w, std::span<const std::uint32_t> ids) {
  require_shape(c.rows == w.rows && c.cols == ids.size(), "add_onehot_columns: shape");
  for (std::size_t i = 0; i < c.rows; ++i) {
    const T* wrow = w.a.data() + i * w.cols;
    T* crow = c.a.data() + i * c.cols;
    for (std::size_t b = 0; b < ids.size(); ++b) {
      if (ids[b] == kPadId) continue;
      require_shape(ids[b] < w.cols, "add_onehot_columns: id out of range");
      crow[b] += wrow[ids[b]];
    }
  }
}

// dW(:, ids[b]) += dZ(:, b). Backward of add_onehot_columns.
template <class T>
void scatter_add_columns(Mat<T>& dw, const Mat<T>& dz, std::span<const std::uint32_t> ids) {
  require_shape(dw.rows == dz.rows && dz.cols == ids.size(), "scatter_add_columns: shape");
  for (std::size_t i = 0; i < dz.rows; ++i) {
    T* wrow = dw.a.data() + i * dw.cols;
    const T* zrow = dz.a.data() + i * dz.cols;
    for (std::size_t b = 0; b < ids.size(); ++b) {
      if (ids[b] == kPadId) continue;
      require_shape(ids[b] < dw.cols, "scatter_add_columns: id out of range");
      wrow[ids[b]] += zrow[b];
    }
  }
}

}  // namespace jointtag
