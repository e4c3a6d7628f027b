#include "eve/depth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "eve/error.hpp"
#include "init.hpp"

namespace eve {
namespace {

double luma(const Image& img, int y, int x) {
  if (img.channels == 1) return img.at(0, y, x);
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

Tensor3 average_pool(const Tensor3& in, int factor) {
  if (factor == 1) return in;
  Tensor3 out(in.channels, in.height / factor, in.width / factor);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) s += in.at(c, y * factor + dy, x * factor + dx);
        }
        out.at(c, y, x) = s * inv;
      }
    }
  }
  return out;
}

void relu_inplace(Tensor3& t) {
  for (double& v : t.data) v = std::max(v, 0.0);
}

}  // namespace

void validate_depth_features(const DepthFeatures& m, int frame_count, std::span<const StageShape> stages) {
  if (m.frame_count() != frame_count) {
    throw config_error("depth pyramid has " + std::to_string(m.frame_count()) + " frames, video has " +
                           std::to_string(frame_count),
                       "depth");
  }
  for (const auto& pyramid : m.frames) {
    if (pyramid.size() != stages.size()) throw config_error("depth pyramid stage count mismatch", "depth");
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& t = pyramid[s];
      if (t.channels != stages[s].channels || t.height != stages[s].height || t.width != stages[s].width) {
        throw config_error("depth feature resolution does not match UNet stage " + std::to_string(s), "depth");
      }
      if (!all_finite(t.data)) throw numeric_error("non-finite depth feature", "depth");
    }
  }
}

DepthFeatures zero_like(const DepthFeatures& m) {
  DepthFeatures z = m;
  for (auto& pyramid : z.frames) {
    for (auto& t : pyramid) std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  return z;
}

Tensor3 normalize_depth(const Tensor3& raw) {
  Tensor3 out = raw;
  if (raw.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(raw.data.begin(), raw.data.end());
  const double range = *hi - *lo;
  if (!(range > 1e-12)) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    return out;
  }
  for (double& v : out.data) v = std::clamp((v - *lo) / range, 0.0, 1.0);
  return out;
}

Tensor3 StubDepthEstimator::estimate(const Image& frame) const {
  Tensor3 raw(1, frame.height, frame.width);
  double mean = 0.0;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) mean += luma(frame, y, x);
  }
  mean /= static_cast<double>(frame.plane());
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double ramp = frame.width > 1 ? static_cast<double>(x) / (frame.width - 1) : 0.0;
      const double l = luma(frame, y, x);
      raw.at(0, y, x) = l + (l - mean) * ramp;
    }
  }
  return normalize_depth(raw);
}

std::vector<Tensor3> estimate_depth(std::span<const Image> frames, const DepthEstimator& estimator) {
  std::vector<Tensor3> maps;
  maps.reserve(frames.size());
  for (const auto& f : frames) maps.push_back(estimator.estimate(f));
  return maps;
}

DepthEncoder::DepthEncoder(const DepthEncoderSpec& spec) : spec_(spec) {
  if (spec.stem < 1) throw config_error("depth encoder stem must be positive", "depth");
  if (spec.stage_channels.empty()) throw config_error("depth encoder needs at least one stage", "depth");
  detail::Rng rng(spec.seed);
  int in = 1;
  for (int c : spec.stage_channels) {
    Stage s;
    s.down = detail::random_conv(c, in, 3, rng, 1.0, false);
    s.res1 = detail::random_conv(c, c, 3, rng, 1.0, false);
    s.res2 = detail::random_conv(c, c, 3, rng, 0.5, false);
    stages_.push_back(std::move(s));
    in = c;
  }
}

int DepthEncoder::total_stride() const noexcept { return spec_.stem << stages_.size(); }

std::vector<StageShape> DepthEncoder::stage_shapes(int height, int width) const {
  const int stride = total_stride();
  if (height % stride != 0 || width % stride != 0) {
    throw config_error("depth map resolution " + std::to_string(height) + "x" + std::to_string(width) +
                           " not divisible by encoder stride " + std::to_string(stride),
                       "depth");
  }
  std::vector<StageShape> shapes;
  int h = height / spec_.stem;
  int w = width / spec_.stem;
  for (int c : spec_.stage_channels) {
    h /= 2;
    w /= 2;
    shapes.push_back({c, h, w});
  }
  return shapes;
}

std::vector<Tensor3> DepthEncoder::encode_map(const Tensor3& depth) const {
  if (depth.channels != 1) throw std::invalid_argument("depth map must be single-channel");
  stage_shapes(depth.height, depth.width);  // divisibility check
  Tensor3 x = average_pool(depth, spec_.stem);
  std::vector<Tensor3> pyramid;
  for (const auto& s : stages_) {
    x = kernels::conv2d(x, s.down, 2);
    Tensor3 r = x;
    relu_inplace(r);
    r = kernels::conv2d(r, s.res1, 1);
    relu_inplace(r);
    r = kernels::conv2d(r, s.res2, 1);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += r.data[i];
    Tensor3 out = x;
    for (double& v : out.data) v *= spec_.output_gain;
    pyramid.push_back(std::move(out));
  }
  return pyramid;
}

void DepthEncoder::visit_params(const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = "depth.stage" + std::to_string(i) + ".";
    fn(p + "down", stages_[i].down.weights);
    fn(p + "res1", stages_[i].res1.weights);
    fn(p + "res2", stages_[i].res2.weights);
  }
}

DepthFeatures DepthEncoder::encode(std::span<const Tensor3> depth_maps) const {
  DepthFeatures m;
  m.frames.resize(depth_maps.size());
  const int n = static_cast<int>(depth_maps.size());
  for (const auto& d : depth_maps) {
    if (d.channels != 1) throw std::invalid_argument("depth map must be single-channel");
    stage_shapes(d.height, d.width);
  }
#pragma omp parallel for schedule(static) if (n > 1)
  for (int k = 0; k < n; ++k) m.frames[k] = encode_map(depth_maps[k]);
  return m;
}

}  // namespace eve
