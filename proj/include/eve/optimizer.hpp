#pragma once

#include <functional>
#include <span>
#include <vector>

#include "eve/backend.hpp"
#include "eve/schedule.hpp"

namespace eve {

enum class GradientMode {
  analytic,       // closed-form cosine gradient
  numeric_check,  // analytic gradient, cross-checked against central differences
};

struct OptimizerConfig {
  double learning_rate = 0.8;
  GradientMode gradient = GradientMode::analytic;
  double guidance_scale = 1.0;
  AttentionMode attention = AttentionMode::frame_align;
  DdimForm ddim_form = DdimForm::exact;
};

// 1 - cos(a_k, b_k) per frame over the flattened latents, averaged over frames.
// Frames that are element-wise identical contribute exactly 0.
double cosine_loss(std::span<const Tensor3> a, std::span<const Tensor3> b);

// d(cosine_loss)/d(a) with b held constant, including the 1/K frame average.
// Identical frames yield an exactly zero gradient.
std::vector<Tensor3> cosine_loss_gradient(std::span<const Tensor3> a, std::span<const Tensor3> b);

// Central-difference gradient of cosine_loss; test and diagnostic use only.
std::vector<Tensor3> cosine_loss_gradient_numeric(std::span<const Tensor3> a, std::span<const Tensor3> b,
                                                  double h = 1e-6);

struct OptimizerTraceRow {
  int step = 0;      // DDIM step t (the update produces step t - 1)
  int timestep = 0;  // training timestep of step t
  double loss_before = 0.0;
  double loss_after = 0.0;
  double grad_norm = 0.0;
  double numeric_gap = 0.0;  // max relative analytic/numeric gap; numeric_check mode only
};

using OptimizerHook = std::function<void(const OptimizerTraceRow&)>;

struct OptimizeInputs {
  const LatentState& latents;        // Z_hat at step t
  int step = 0;                      // t in [1, T]
  const PromptEmbedding& prompt;
  const DepthFeatures* depth = nullptr;  // null: depth guidance disabled
};

// One denoising step with latent refinement: a depth-guided and a depth-free
// DDIM denoise from the same latents, then a single gradient step on the
// guided result toward the free one under the cosine loss. The free branch is
// a constant target; nothing is propagated through the backbone.
LatentState optimize_step(const OptimizeInputs& in, const NoiseSchedule& sched, const Backend& backend,
                          const OptimizerConfig& cfg, const OptimizerHook& hook = {});

}  // namespace eve
