#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "eve/attention.hpp"
#include "eve/backend.hpp"
#include "eve/depth.hpp"
#include "eve/kernels.hpp"
#include "eve/schedule.hpp"

namespace eve {

struct ToyBackendSpec {
  std::uint64_t seed = 20240301;
  int latent_channels = 4;
  int downscale = 8;
  std::vector<int> channels{8, 16};  // UNet width per level
  int text_dim = 8;
  int max_tokens = 8;
  int train_steps = 1000;
  BetaSpec prior_betas = BetaSpec::toy_default();
  double prior_std = 0.5;     // std of the Gaussian latent prior behind the analytic term
  double output_gain = 0.1;   // scale of the UNet residual
  DepthEncoderSpec depth{};
};

// Small frozen latent-diffusion stack implementing the whole Backend surface:
//  * image codec: 8x8 average pooling plus a fixed 3->4 colour mix, decoded
//    through its pseudo-inverse and nearest upsampling;
//  * text encoder: hashed word vectors with positional terms, padded to
//    max_tokens (the null embedding is the encoding of "");
//  * noise predictor = closed-form optimal eps for a N(0, prior_std^2) latent
//    prior, plus the residual of a two-level UNet built from Conv-Attn blocks (conv -> self-attention slot ->
//    cross-attention -> FFN, each residual), additive depth injection after
//    each down-sampling stage;
//  * bias-free depth encoder matched to the UNet stages.
class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(const ToyBackendSpec& spec = {});

  // Weight-file adapter: same architecture, parameters read from JSON.
  static ToyBackend load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const ToyBackendSpec& spec() const noexcept { return spec_; }

  BackendInfo info() const override;
  Tensor3 encode_image(const Image& image) const override;
  Image decode_latent(const Tensor3& latent) const override;
  PromptEmbedding encode_text(std::string_view prompt) const override;
  const PromptEmbedding& null_prompt() const override { return null_prompt_; }
  DepthFeatures encode_depth(std::span<const Tensor3> depth_maps) const override;
  std::vector<StageShape> stage_shapes(int latent_height, int latent_width) const override;
  std::vector<Tensor3> predict_noise(const NoiseRequest& request) const override;

  const DepthEncoder& depth_encoder() const noexcept { return depth_encoder_; }

 private:
  struct ConvAttnBlock {
    ConvWeights conv;
    AttentionWeights self_attn;
    AttentionWeights cross_attn;
    Matrix ffn_in;
    Matrix ffn_out;
  };

  void init_weights();
  void finish_init();
  void for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn);
  void run_block(const ConvAttnBlock& block, std::vector<Tensor3>& hidden, const PromptEmbedding& prompt,
                 AttentionMode mode) const;
  std::vector<double> time_embedding(int timestep, int width) const;

  ToyBackendSpec spec_;
  Matrix color_mix_;      // latent_channels x 3
  Matrix color_unmix_;    // 3 x latent_channels, pseudo-inverse of color_mix_
  Matrix time_proj0_;     // c0 x c0
  Matrix time_proj1_;     // c1 x c0
  ConvWeights conv_in_;
  ConvAttnBlock down0_;
  ConvWeights down_conv_;
  ConvAttnBlock down1_;
  ConvWeights up_conv_;
  ConvAttnBlock up0_;
  ConvWeights conv_out_;
  std::vector<double> prior_alpha_bars_;  // index t-1 for training timestep t
  std::vector<double> pad_token_;
  std::vector<double> bos_token_;
  PromptEmbedding null_prompt_;
  DepthEncoder depth_encoder_;
};

}  // namespace eve
