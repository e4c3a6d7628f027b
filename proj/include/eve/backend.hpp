#pragma once

#include <atomic>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eve/attention.hpp"
#include "eve/depth.hpp"
#include "eve/tensor.hpp"

namespace eve {

struct BackendInfo {
  std::string name;
  int latent_channels = 4;
  int downscale = 8;          // image pixels per latent pixel, per side
  double latent_scale = 1.0;  // multiplier applied to encoder output before diffusion
  int unet_stride = 2;        // total down-sampling inside the UNet
};

// One noise-prediction call over all frames of a video at one timestep.
struct NoiseRequest {
  std::span<const Tensor3> latents;
  int timestep = 0;                        // training timestep
  const PromptEmbedding* prompt = nullptr; // null -> the backend's null embedding
  const DepthFeatures* depth = nullptr;    // null -> no depth injection
  AttentionMode attention = AttentionMode::frame_align;
};

// The model surface the editor needs. Implementations hold frozen weights and
// are safe to call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendInfo info() const = 0;
  virtual Tensor3 encode_image(const Image& image) const = 0;
  virtual Image decode_latent(const Tensor3& latent) const = 0;
  virtual PromptEmbedding encode_text(std::string_view prompt) const = 0;
  virtual const PromptEmbedding& null_prompt() const = 0;
  virtual DepthFeatures encode_depth(std::span<const Tensor3> depth_maps) const = 0;
  // Depth pyramid shapes the UNet expects for a latent of the given size.
  virtual std::vector<StageShape> stage_shapes(int latent_height, int latent_width) const = 0;
  virtual std::vector<Tensor3> predict_noise(const NoiseRequest& request) const = 0;
};

// Counts predict_noise calls on the wrapped backend.
class InstrumentedBackend final : public Backend {
 public:
  explicit InstrumentedBackend(const Backend& inner) : inner_(inner) {}

  long long noise_evaluations() const noexcept { return evals_.load(); }
  void reset() noexcept { evals_ = 0; }

  BackendInfo info() const override { return inner_.info(); }
  Tensor3 encode_image(const Image& image) const override { return inner_.encode_image(image); }
  Image decode_latent(const Tensor3& latent) const override { return inner_.decode_latent(latent); }
  PromptEmbedding encode_text(std::string_view prompt) const override { return inner_.encode_text(prompt); }
  const PromptEmbedding& null_prompt() const override { return inner_.null_prompt(); }
  DepthFeatures encode_depth(std::span<const Tensor3> maps) const override { return inner_.encode_depth(maps); }
  std::vector<StageShape> stage_shapes(int h, int w) const override { return inner_.stage_shapes(h, w); }
  std::vector<Tensor3> predict_noise(const NoiseRequest& request) const override {
    ++evals_;
    return inner_.predict_noise(request);
  }

 private:
  const Backend& inner_;
  mutable std::atomic<long long> evals_{0};
};

// Classifier-free guidance: one backbone pass at scale 1, else
// eps_null + scale * (eps_cond - eps_null).
std::vector<Tensor3> guided_noise(const Backend& backend, NoiseRequest request, const PromptEmbedding& prompt,
                                  double guidance_scale);

}  // namespace eve
