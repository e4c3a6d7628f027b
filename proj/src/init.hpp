#pragma once

// Deterministic parameter initialisation shared by the frozen toy networks.

#include <cmath>
#include <cstdint>
#include <random>

#include "eve/kernels.hpp"
#include "eve/tensor.hpp"

namespace eve::detail {

using Rng = std::mt19937_64;

inline void fill_normal(std::vector<double>& v, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : v) x = dist(rng);
}

// Fan-in scaled weights; `gain` multiplies the 1/sqrt(fan_in) standard deviation.
inline Matrix random_matrix(int rows, int cols, Rng& rng, double gain = 1.0) {
  Matrix m(rows, cols);
  fill_normal(m.data, rng, gain / std::sqrt(static_cast<double>(cols)));
  return m;
}

inline ConvWeights random_conv(int out, int in, int kernel, Rng& rng, double gain, bool with_bias) {
  ConvWeights w{out, in, kernel, std::vector<double>(static_cast<std::size_t>(out) * in * kernel * kernel), {}};
  fill_normal(w.weights, rng, gain / std::sqrt(static_cast<double>(in * kernel * kernel)));
  if (with_bias) {
    w.bias.resize(out);
    fill_normal(w.bias, rng, 0.1 * gain);
  }
  return w;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace eve::detail
