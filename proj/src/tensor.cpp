#include "eve/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace eve {

Matrix concat_rows(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("concat_rows: column mismatch");
  Matrix out(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

Matrix to_tokens(const Tensor3& t) {
  Matrix m(t.height * t.width, t.channels);
  const std::size_t plane = t.plane();
  for (int c = 0; c < t.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      m.data[p * t.channels + c] = t.data[c * plane + p];
    }
  }
  return m;
}

Tensor3 from_tokens(const Matrix& m, int height, int width) {
  if (m.rows != height * width) throw std::invalid_argument("from_tokens: token count mismatch");
  Tensor3 t(m.cols, height, width);
  const std::size_t plane = t.plane();
  for (int c = 0; c < m.cols; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      t.data[c * plane + p] = m.data[p * m.cols + c];
    }
  }
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace eve
