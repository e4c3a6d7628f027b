#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eve/backend.hpp"
#include "eve/depth.hpp"
#include "eve/optimizer.hpp"
#include "eve/schedule.hpp"

namespace eve {

struct EditConfig {
  std::string video;               // video file or directory of numbered frames
  std::string prompt;              // empty: null text embedding
  int frames = 8;                  // K
  int resolution = 512;
  int steps = 50;                  // T
  int train_steps = 1000;
  std::string beta_schedule = "default";  // default | linear | scaled-linear
  double learning_rate = 0.8;
  AttentionMode attention = AttentionMode::frame_align;
  bool depth_guidance = true;
  std::string backend = "toy";     // toy | pretrained
  std::string weights;             // weight file for the pretrained adapter
  std::string depth_backend = "stub";  // stub | http
  std::string depth_url;
  std::uint64_t seed = 7;          // toy model seed
  double guidance_scale = -1.0;    // < 0: backend default (1.0 toy, 7.5 pretrained)
  bool optimize = true;            // false: plain DDIM denoising, no latent refinement
  DdimForm ddim_form = DdimForm::exact;
  std::string output_dir;

  double effective_guidance() const { return guidance_scale >= 0.0 ? guidance_scale : backend == "toy" ? 1.0 : 7.5; }
};

// Throws a config error describing the first violated constraint.
void validate(const EditConfig& cfg);

NoiseSchedule make_schedule(const EditConfig& cfg);
std::unique_ptr<Backend> make_backend(const EditConfig& cfg);
std::unique_ptr<DepthEstimator> make_depth_estimator(const EditConfig& cfg);

// K indices at uniform temporal stride, starting with frame 0.
std::vector<int> sample_frame_indices(int available, int k);
std::vector<Image> sample_frames(std::span<const Image> video, int k);

LatentState encode_frames(std::span<const Image> frames, const Backend& backend);
std::vector<Image> decode_frames(const LatentState& z, const Backend& backend);

// Called with the latents after every DDIM step.
using StepObserver = std::function<void(const LatentState&)>;

struct InversionOptions {
  AttentionMode attention = AttentionMode::frame_align;
  DdimForm ddim_form = DdimForm::exact;
};

// Z_0 -> Z_T with text-free noise predictions, depth-injected when `depth` is set.
LatentState invert(const LatentState& z0, const DepthFeatures* depth, const NoiseSchedule& sched,
                   const Backend& backend, const InversionOptions& opt = {}, const StepObserver& observe = {});

// Z_T -> Z_0 by plain DDIM denoising (no latent refinement).
LatentState denoise(const LatentState& z_t, const PromptEmbedding& prompt, const DepthFeatures* depth,
                    const NoiseSchedule& sched, const Backend& backend, const OptimizerConfig& cfg,
                    const StepObserver& observe = {});

// Z_T -> Z_0 with one cosine-loss refinement per step.
LatentState denoise_optimized(const LatentState& z_t, const PromptEmbedding& prompt, const DepthFeatures* depth,
                              const NoiseSchedule& sched, const Backend& backend, const OptimizerConfig& cfg,
                              std::vector<OptimizerTraceRow>* trace = nullptr, const StepObserver& observe = {});

struct StageTimings {
  double encode = 0.0;
  double depth = 0.0;
  double inversion = 0.0;
  double denoise = 0.0;
  double decode = 0.0;
  double total = 0.0;
};

struct EditResult {
  EditConfig config;
  std::vector<Image> frames;  // edited frames at the working resolution
  LatentState inverted;       // Z_T
  LatentState edited;         // Z_hat_0
  std::vector<double> inversion_rms;  // latent RMS after each inversion step
  std::vector<double> denoise_rms;    // latent RMS after each denoising step
  std::vector<OptimizerTraceRow> trace;
  long long inversion_evals = 0;
  long long denoise_evals = 0;
  StageTimings timings;
};

// Runs the full edit on already sampled, preprocessed frames.
EditResult edit(const EditConfig& cfg, std::span<const Image> frames, const Backend& backend,
                const DepthEstimator& depth_estimator);

// Loads and prepares the video named in the config.
std::vector<Image> load_frames(const EditConfig& cfg);

// Writes frames/NNN.png, result.json and trace.csv into `dir`, building them
// in a sibling temporary directory first and renaming it into place.
void write_edit_outputs(const EditResult& result, const std::filesystem::path& dir);

// load -> edit -> write, with stage-tagged errors.
EditResult run_edit(const EditConfig& cfg);

nlohmann::json config_to_json(const EditConfig& cfg);
nlohmann::json result_to_json(const EditResult& result);

// Writes into a temporary sibling of `dir` and renames it into place once
// `fill` returns. An existing `dir` is replaced only if it holds result.json.
void write_atomically(const std::filesystem::path& dir, const std::function<void(const std::filesystem::path&)>& fill);

inline constexpr int kResultSchemaVersion = 1;

}  // namespace eve
