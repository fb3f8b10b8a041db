#include "wavy/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wavy {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorCode::kShapeMismatch, "data length " + std::to_string(data_.size()) +
                                        " does not match " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) fail(ErrorCode::kShapeMismatch, "ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kShapeMismatch,
         std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

bool all_finite(const Matrix& m) noexcept {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) fail(ErrorCode::kNonFinite, std::string(what) + " contains NaN/Inf");
}

// The kernels below block over rows/columns for register reuse but keep each
// output element's accumulation in ascending k, so every result is bitwise
// identical to the naive triple loop.

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kShapeMismatch, "matmul " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t m = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* __restrict o0 = od + i * n;
    double* __restrict o1 = o0 + n;
    double* __restrict o2 = o1 + n;
    double* __restrict o3 = o2 + n;
    const double* a0 = ad + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double* __restrict br = bd + k * n;
      const double x0 = a0[k];
      const double x1 = a0[inner + k];
      const double x2 = a0[2 * inner + k];
      const double x3 = a0[3 * inner + k];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = br[j];
        o0[j] += x0 * bv;
        o1[j] += x1 * bv;
        o2[j] += x2 * bv;
        o3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* __restrict o = od + i * n;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ad[i * inner + k];
      const double* __restrict br = bd + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kShapeMismatch, "matmul_nt " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  const std::size_t nb = b.rows();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    std::size_t j = 0;
    for (; j + 4 <= nb; j += 4) {
      const double* b0 = b.row(j).data();
      const double* b1 = b0 + inner;
      const double* b2 = b1 + inner;
      const double* b3 = b2 + inner;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        const double av = ar[k];
        s0 += av * b0[k];
        s1 += av * b1[k];
        s2 += av * b2[k];
        s3 += av * b3[k];
      }
      out(i, j) = s0;
      out(i, j + 1) = s1;
      out(i, j + 2) = s2;
      out(i, j + 3) = s3;
    }
    for (; j < nb; ++j) {
      const double* br = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    fail(ErrorCode::kShapeMismatch, "matmul_tn " + a.shape_string() + "^T x " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  const std::size_t ca = a.cols();
  double* od = out.data().data();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k).data();
    const double* __restrict br = b.row(k).data();
    std::size_t i = 0;
    for (; i + 4 <= ca; i += 4) {
      double* __restrict o0 = od + i * n;
      double* __restrict o1 = o0 + n;
      double* __restrict o2 = o1 + n;
      double* __restrict o3 = o2 + n;
      const double x0 = ar[i], x1 = ar[i + 1], x2 = ar[i + 2], x3 = ar[i + 3];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = br[j];
        o0[j] += x0 * bv;
        o1[j] += x1 * bv;
        o2[j] += x2 * bv;
        o3[j] += x3 * bv;
      }
    }
    for (; i < ca; ++i) {
      const double aki = ar[i];
      double* __restrict o = od + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

namespace {

template <class Fn>
Matrix zip(const Matrix& a, const Matrix& b, const char* what, Fn fn) {
  require_same_shape(a, b, what);
  Matrix out(a.rows(), a.cols());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i], y[i]);
  return out;
}

template <class Fn>
Matrix map(const Matrix& a, Fn fn) {
  Matrix out(a.rows(), a.cols());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i]);
  return out;
}

void require_row(const Matrix& m, const Matrix& row, bool allow_scalar, const char* what) {
  const bool ok = row.rows() == 1 && (row.cols() == m.cols() || (allow_scalar && row.cols() == 1));
  if (!ok) fail(ErrorCode::kShapeMismatch, std::string(what) + ": row " + row.shape_string() +
                                               " against " + m.shape_string());
}

}  // namespace

Matrix operator+(const Matrix& a, const Matrix& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Matrix operator*(double s, const Matrix& m) {
  return map(m, [s](double v) { return s * v; });
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add-assign");
  auto o = a.data();
  auto x = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += x[i];
  return a;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Matrix affine(const Matrix& m, double s, double c) {
  return map(m, [s, c](double v) { return s * v + c; });
}

Matrix add_row(const Matrix& m, const Matrix& row) {
  require_row(m, row, false, "add_row");
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += row(0, j);
  }
  return out;
}

Matrix mul_row(const Matrix& m, const Matrix& row) {
  require_row(m, row, true, "mul_row");
  Matrix out = m;
  const bool scalar = row.cols() == 1;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] *= row(0, scalar ? 0 : j);
  }
  return out;
}

Matrix sigmoid(const Matrix& m) {
  return map(m, [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix row_softmax(const Matrix& m) {
  require_finite(m, "row_softmax input");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) fail(ErrorCode::kShapeMismatch, "slice_rows out of range");
  Matrix out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(first * m.cols()), count * m.cols(),
              out.data().begin());
  return out;
}

Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.cols()) fail(ErrorCode::kShapeMismatch, "slice_cols out of range");
  Matrix out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, first + j);
  return out;
}

Matrix concat_rows(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) fail(ErrorCode::kShapeMismatch, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  auto it = out.data().begin();
  for (const auto& p : parts) it = std::copy(p.data().begin(), p.data().end(), it);
  return out;
}

Matrix concat_cols(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) fail(ErrorCode::kShapeMismatch, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, offset + j) = p(i, j);
    offset += p.cols();
  }
  return out;
}

Matrix gather_rows(const Matrix& table, std::span<const int> indices) {
  Matrix out(indices.size(), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= table.rows()) {
      fail(ErrorCode::kVocabOverflow, "row index " + std::to_string(idx) + " outside table of " +
                                          std::to_string(table.rows()) + " rows");
    }
    auto src = table.row(static_cast<std::size_t>(idx));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix column_means(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
  for (double& v : out.data()) v /= static_cast<double>(m.rows());
  return out;
}

double max_abs(const Matrix& m) noexcept {
  double best = 0.0;
  for (double v : m.data()) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
  return best;
}

double frobenius_norm(const Matrix& m) noexcept {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

double sum(const Matrix& m) noexcept {
  double acc = 0.0;
  for (double v : m.data()) acc += v;
  return acc;
}

Matrix central_jvp(const std::function<Matrix(const Matrix&)>& f, const Matrix& x, const Matrix& y,
                   double eps) {
  if (!(eps > 0)) fail(ErrorCode::kInvalidArgument, "central_jvp requires eps > 0");
  require_same_shape(x, y, "central_jvp direction");
  const Matrix plus = f(x + eps * y);
  const Matrix minus = f(x - eps * y);
  require_finite(plus, "central_jvp f(x + eps y)");
  require_finite(minus, "central_jvp f(x - eps y)");
  return (1.0 / (2.0 * eps)) * (plus - minus);
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Prng::Prng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Prng::next_u64() noexcept {
  const auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Prng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Prng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Prng::uniform_index(std::uint64_t n) noexcept {
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

Prng Prng::split() noexcept { return Prng(next_u64()); }

Matrix gaussian_init(Prng& prng, std::size_t rows, std::size_t cols, double std_dev) {
  if (std_dev < 0) fail(ErrorCode::kInvalidArgument, "gaussian_init requires std >= 0");
  Matrix out(rows, cols);
  for (double& v : out.data()) v = std_dev * prng.normal();
  return out;
}

}  // namespace wavy
