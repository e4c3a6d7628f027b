#include "eve/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eve::kernels {
namespace {

// Below this many output rows/channels the parallel region costs more than it saves.
constexpr int kParallelThreshold = 16;

void check_project(const Matrix& x, const Matrix& w) {
  if (x.cols != w.cols) throw std::invalid_argument("project: input width does not match weight columns");
}

void check_attention(const Matrix& q, const Matrix& k) {
  if (q.cols != k.cols) throw std::invalid_argument("attention: query/key feature widths differ");
  if (k.rows == 0) throw std::invalid_argument("attention: no keys");
}

void check_values(const Matrix& k, const Matrix& v) {
  if (k.rows != v.rows) throw std::invalid_argument("attention: key/value token counts differ");
}

void check_conv(const Tensor3& in, const ConvWeights& w, int stride) {
  if (in.channels != w.in_channels) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
}

inline void project_row(const Matrix& x, const Matrix& w, int r, Matrix& out) {
  const auto xr = x.row(r);
  for (int o = 0; o < w.rows; ++o) {
    const auto wr = w.row(o);
    double s = 0.0;
    for (int i = 0; i < x.cols; ++i) s += xr[i] * wr[i];
    out(r, o) = s;
  }
}

// Writes softmax(q_r . K^T / sqrt(d)) into `probs`.
inline void softmax_row(const Matrix& q, const Matrix& k, int r, std::span<double> probs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  const auto qr = q.row(r);
  double max_score = -INFINITY;
  for (int j = 0; j < k.rows; ++j) {
    const auto kj = k.row(j);
    double s = 0.0;
    for (int i = 0; i < q.cols; ++i) s += qr[i] * kj[i];
    probs[j] = s * scale;
    max_score = std::max(max_score, probs[j]);
  }
  double total = 0.0;
  for (int j = 0; j < k.rows; ++j) {
    probs[j] = std::exp(probs[j] - max_score);
    total += probs[j];
  }
  for (int j = 0; j < k.rows; ++j) probs[j] /= total;
}

inline void attention_row(const Matrix& q, const Matrix& k, const Matrix& v, int r, std::vector<double>& scratch,
                          Matrix& out) {
  scratch.resize(k.rows);
  softmax_row(q, k, r, scratch);
  auto orow = out.row(r);
  std::fill(orow.begin(), orow.end(), 0.0);
  for (int j = 0; j < k.rows; ++j) {
    const auto vj = v.row(j);
    const double p = scratch[j];
    for (int c = 0; c < v.cols; ++c) orow[c] += p * vj[c];
  }
}

inline void conv_channel(const Tensor3& in, const ConvWeights& w, int stride, int o, Tensor3& out) {
  const int pad = w.kernel / 2;
  const double b = w.bias.empty() ? 0.0 : w.bias[o];
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double s = b;
      for (int i = 0; i < w.in_channels; ++i) {
        for (int ky = 0; ky < w.kernel; ++ky) {
          const int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= in.height) continue;
          for (int kx = 0; kx < w.kernel; ++kx) {
            const int sx = x * stride + kx - pad;
            if (sx < 0 || sx >= in.width) continue;
            s += w.at(o, i, ky, kx) * in.at(i, sy, sx);
          }
        }
      }
      out.at(o, y, x) = s;
    }
  }
}

Tensor3 conv_output(const Tensor3& in, const ConvWeights& w, int stride) {
  return Tensor3(w.out_channels, conv_out_extent(in.height, w.kernel, stride),
                 conv_out_extent(in.width, w.kernel, stride));
}

}  // namespace

namespace serial {

Matrix project(const Matrix& x, const Matrix& w) {
  check_project(x, w);
  Matrix out(x.rows, w.rows);
  for (int r = 0; r < x.rows; ++r) project_row(x, w, r, out);
  return out;
}

Matrix attention_probs(const Matrix& q, const Matrix& k) {
  check_attention(q, k);
  Matrix probs(q.rows, k.rows);
  for (int r = 0; r < q.rows; ++r) softmax_row(q, k, r, probs.row(r));
  return probs;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  check_attention(q, k);
  check_values(k, v);
  Matrix out(q.rows, v.cols);
  std::vector<double> scratch;
  for (int r = 0; r < q.rows; ++r) attention_row(q, k, v, r, scratch, out);
  return out;
}

Tensor3 conv2d(const Tensor3& in, const ConvWeights& w, int stride) {
  check_conv(in, w, stride);
  Tensor3 out = conv_output(in, w, stride);
  for (int o = 0; o < w.out_channels; ++o) conv_channel(in, w, stride, o, out);
  return out;
}

}  // namespace serial

namespace omp {

Matrix project(const Matrix& x, const Matrix& w) {
  check_project(x, w);
  Matrix out(x.rows, w.rows);
#pragma omp parallel for schedule(static) if (x.rows >= kParallelThreshold)
  for (int r = 0; r < x.rows; ++r) project_row(x, w, r, out);
  return out;
}

Matrix attention_probs(const Matrix& q, const Matrix& k) {
  check_attention(q, k);
  Matrix probs(q.rows, k.rows);
#pragma omp parallel for schedule(static) if (q.rows >= kParallelThreshold)
  for (int r = 0; r < q.rows; ++r) softmax_row(q, k, r, probs.row(r));
  return probs;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  check_attention(q, k);
  check_values(k, v);
  Matrix out(q.rows, v.cols);
#pragma omp parallel if (q.rows >= kParallelThreshold)
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (int r = 0; r < q.rows; ++r) attention_row(q, k, v, r, scratch, out);
  }
  return out;
}

Tensor3 conv2d(const Tensor3& in, const ConvWeights& w, int stride) {
  check_conv(in, w, stride);
  Tensor3 out = conv_output(in, w, stride);
#pragma omp parallel for schedule(static) if (w.out_channels * out.height >= kParallelThreshold)
  for (int o = 0; o < w.out_channels; ++o) conv_channel(in, w, stride, o, out);
  return out;
}

}  // namespace omp
}  // namespace eve::kernels
