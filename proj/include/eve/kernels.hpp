#pragma once

// Dense compute kernels used by the attention backbone and depth encoder.
//
// Every kernel exists twice: `serial::` is the straightforward reference, and
// `omp::` parallelises the outer loop with OpenMP. Each output element is
// produced by the same sequence of floating-point operations in both, so the
// two are bit-identical; tests rely on that. The unqualified `kernels::`
// entry points dispatch to the OpenMP versions.

#include <vector>

#include "eve/tensor.hpp"

namespace eve {

struct ConvWeights {
  int out_channels = 0;
  int in_channels = 0;
  int kernel = 3;
  std::vector<double> weights;  // [out][in][ky][kx]
  std::vector<double> bias;     // empty means bias-free

  double at(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
  }
};

namespace kernels {

namespace serial {
// X (n x in) times W^T, W is (out x in). Result (n x out).
Matrix project(const Matrix& x, const Matrix& w);
// Row-wise softmax(Q K^T / sqrt(d)).
Matrix attention_probs(const Matrix& q, const Matrix& k);
// softmax(Q K^T / sqrt(d)) V.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);
// Zero-padded 2-D convolution with "same" padding (kernel / 2) and the given stride.
Tensor3 conv2d(const Tensor3& in, const ConvWeights& w, int stride = 1);
}  // namespace serial

namespace omp {
Matrix project(const Matrix& x, const Matrix& w);
Matrix attention_probs(const Matrix& q, const Matrix& k);
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);
Tensor3 conv2d(const Tensor3& in, const ConvWeights& w, int stride = 1);
}  // namespace omp

inline Matrix project(const Matrix& x, const Matrix& w) { return omp::project(x, w); }
inline Matrix attention_probs(const Matrix& q, const Matrix& k) { return omp::attention_probs(q, k); }
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) { return omp::attention(q, k, v); }
inline Tensor3 conv2d(const Tensor3& in, const ConvWeights& w, int stride = 1) {
  return omp::conv2d(in, w, stride);
}

// Output extent of a "same"-padded convolution.
inline int conv_out_extent(int extent, int kernel, int stride) {
  const int pad = kernel / 2;
  return (extent + 2 * pad - kernel) / stride + 1;
}

}  // namespace kernels
}  // namespace eve
