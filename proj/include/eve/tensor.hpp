#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace eve {

// Dense (channels, height, width) tensor in row-major order. Used for latents,
// images (3 channels in [0,1]), depth maps (1 channel) and feature maps.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }

  double& at(int c, int y, int x) { return data[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(c * plane()) + static_cast<std::size_t>(y) * width + x];
  }

  std::span<double> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool same_shape(const Tensor3& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Tensor3&) const = default;
};

using Image = Tensor3;

// Row-major matrix. Token sequences are (tokens x features).
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool operator==(const Matrix&) const = default;
};

// Stacks rows of `a` on top of rows of `b` (token-axis concatenation).
Matrix concat_rows(const Matrix& a, const Matrix& b);

// (C,H,W) feature map <-> (H*W, C) token matrix.
Matrix to_tokens(const Tensor3& t);
Tensor3 from_tokens(const Matrix& m, int height, int width);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

}  // namespace eve
