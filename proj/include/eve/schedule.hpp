#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "eve/tensor.hpp"

namespace eve {

enum class BetaKind {
  linear,         // beta_t linearly spaced from start to end
  scaled_linear,  // sqrt(beta_t) linearly spaced, then squared
  explicit_list,  // caller-supplied betas
};

struct BetaSpec {
  BetaKind kind = BetaKind::linear;
  double start = 1e-4;
  double end = 0.02;
  std::vector<double> values;  // only for explicit_list

  static BetaSpec linear(double start, double end) { return {BetaKind::linear, start, end, {}}; }
  static BetaSpec scaled_linear(double start, double end) { return {BetaKind::scaled_linear, start, end, {}}; }
  static BetaSpec explicit_list(std::vector<double> betas) {
    return {BetaKind::explicit_list, 0.0, 0.0, std::move(betas)};
  }
  // Endpoints used with pretrained latent-diffusion weights.
  static BetaSpec pretrained_default() { return scaled_linear(0.00085, 0.012); }
  static BetaSpec toy_default() { return linear(1e-4, 0.02); }
};

// Immutable beta / cumulative-alpha tables and the DDIM sub-sampling.
//
// Training timesteps run 1..train_steps; alpha_bar(0) == 1 exactly. DDIM step
// k in 1..ddim_steps maps to training timestep timestep(k); DDIM step 0 is the
// clean-latent boundary.
class NoiseSchedule {
 public:
  int train_steps() const noexcept { return static_cast<int>(betas_.size()); }
  int ddim_steps() const noexcept { return static_cast<int>(timestep_map_.size()); }

  // Index i holds the value for training timestep i + 1.
  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }
  std::span<const int> timestep_map() const noexcept { return timestep_map_; }

  double alpha_bar_at_timestep(int t) const;  // t in [0, train_steps]
  int timestep(int step) const;               // step in [1, ddim_steps]
  double alpha_bar_at_step(int step) const;   // step in [0, ddim_steps]

 private:
  friend NoiseSchedule build_schedule(int, int, const BetaSpec&);
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<int> timestep_map_;
};

// Throws config errors for ddim_steps outside [1, train_steps] and for beta
// endpoints outside (0, 1) or decreasing.
NoiseSchedule build_schedule(int train_steps, int ddim_steps, const BetaSpec& betas);

// Plain-text table: a "# train_steps=N ddim_steps=T" header, then one
// "t beta_t alpha_bar_t" row per training step.
void write_schedule_table(std::ostream& os, const NoiseSchedule& sched);
NoiseSchedule read_schedule_table(std::istream& is);

// Per-frame latents at one point of a DDIM trajectory.
struct LatentState {
  std::vector<Tensor3> frames;
  int step_index = 0;

  int frame_count() const noexcept { return static_cast<int>(frames.size()); }
};

// Coefficient form of the deterministic update.
//
// `exact`: eps coefficient sqrt(1 - a_prev) - sqrt(a_prev) * sqrt(1/a_cur - 1),
// i.e. predict the clean latent and re-noise it. Denoise and invert are exact
// inverses for a fixed eps.
//
// `as_written`: eps coefficient sqrt(1 - a_prev) - sqrt(1/a_cur - 1), without
// the sqrt(a_prev) factor. Kept for reproducing that form; it does not invert.
enum class DdimForm { exact, as_written };

// One step's affine map z_out = scale * z_in + noise_coef * eps.
struct StepCoefficients {
  double scale;
  double noise_coef;
};

StepCoefficients denoise_coefficients(double alpha_bar_prev, double alpha_bar_cur, DdimForm form = DdimForm::exact);
StepCoefficients invert_coefficients(double alpha_bar_prev, double alpha_bar_cur, DdimForm form = DdimForm::exact);

// Raw-alpha variants, applied per frame. `eps` must match `z` frame by frame.
std::vector<Tensor3> ddim_denoise(std::span<const Tensor3> z, std::span<const Tensor3> eps, double alpha_bar_prev,
                                  double alpha_bar_cur, DdimForm form = DdimForm::exact);
std::vector<Tensor3> ddim_invert(std::span<const Tensor3> z, std::span<const Tensor3> eps, double alpha_bar_prev,
                                 double alpha_bar_cur, DdimForm form = DdimForm::exact);

// z_t -> z_{t-1}; `step` in [1, T]. The result carries step_index step - 1.
LatentState ddim_denoise_step(const LatentState& z_t, int step, std::span<const Tensor3> eps,
                              const NoiseSchedule& sched, DdimForm form = DdimForm::exact);
// z_{t-1} -> z_t; `step` in [1, T]. The result carries step_index step.
LatentState ddim_invert_step(const LatentState& z_prev, int step, std::span<const Tensor3> eps,
                             const NoiseSchedule& sched, DdimForm form = DdimForm::exact);

// Closed-form forward process sqrt(a) z0 + sqrt(1 - a) noise at training timestep t.
LatentState forward_diffuse(const LatentState& z0, int timestep, std::span<const Tensor3> noise,
                            const NoiseSchedule& sched);
std::vector<Tensor3> forward_diffuse(std::span<const Tensor3> z0, std::span<const Tensor3> noise, double alpha_bar);

}  // namespace eve
