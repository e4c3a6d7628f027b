#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eve/kernels.hpp"
#include "eve/tensor.hpp"

namespace eve {

struct StageShape {
  int channels;
  int height;
  int width;
  bool operator==(const StageShape&) const = default;
};

// Per-frame feature pyramids: frames[k][s] is frame k at down-sampling stage s.
struct DepthFeatures {
  std::vector<std::vector<Tensor3>> frames;

  int frame_count() const noexcept { return static_cast<int>(frames.size()); }
};

// Checks the pyramid against the expected stage shapes; throws on any mismatch.
void validate_depth_features(const DepthFeatures& m, int frame_count, std::span<const StageShape> stages);

// Same shapes, every entry zero.
DepthFeatures zero_like(const DepthFeatures& m);

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  // Single-channel map at the frame resolution, values in [0, 1].
  virtual Tensor3 estimate(const Image& frame) const = 0;
  virtual std::string name() const = 0;
};

// Deterministic stand-in for a monocular depth network: a horizontal ramp
// modulated by each pixel's luma deviation from the frame mean, then min-max
// normalised. Constant frames give the all-zero map.
class StubDepthEstimator final : public DepthEstimator {
 public:
  Tensor3 estimate(const Image& frame) const override;
  std::string name() const override { return "stub"; }
};

// Posts the frame as PNG to `<base_url>/depth` and expects a JSON body
// {"width": W, "height": H, "depth": [W*H floats]}.
class HttpDepthEstimator final : public DepthEstimator {
 public:
  HttpDepthEstimator(std::string base_url, std::string token = {}, int timeout_seconds = 60);
  Tensor3 estimate(const Image& frame) const override;
  std::string name() const override { return "http"; }

 private:
  std::string base_url_;
  std::string token_;
  int timeout_seconds_;
};

std::vector<Tensor3> estimate_depth(std::span<const Image> frames, const DepthEstimator& estimator);

// Per-map min-max normalisation into [0, 1]; a flat map becomes all zeros.
Tensor3 normalize_depth(const Tensor3& raw);

struct DepthEncoderSpec {
  int stem = 4;                         // average-pool factor ahead of the first stage
  std::vector<int> stage_channels{8, 16};
  std::uint64_t seed = 0x5eed'de97;
  double output_gain = 0.25;
};

// Frozen residual-convolution stack. Every layer is bias-free and the stem is
// linear, so a zero map encodes to an all-zero pyramid.
class DepthEncoder {
 public:
  explicit DepthEncoder(const DepthEncoderSpec& spec = {});

  int total_stride() const noexcept;
  int stage_count() const noexcept { return static_cast<int>(stages_.size()); }
  std::vector<StageShape> stage_shapes(int height, int width) const;

  std::vector<Tensor3> encode_map(const Tensor3& depth) const;
  DepthFeatures encode(std::span<const Tensor3> depth_maps) const;

  // Visits every weight array under a stable name (weight-file I/O).
  void visit_params(const std::function<void(const std::string&, std::vector<double>&)>& fn);

 private:
  struct Stage {
    ConvWeights down;  // stride 2
    ConvWeights res1;
    ConvWeights res2;
  };
  DepthEncoderSpec spec_;
  std::vector<Stage> stages_;
};

}  // namespace eve
