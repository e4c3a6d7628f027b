#include "eve/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "eve/error.hpp"
#include "eve/frames_io.hpp"
#include "eve/toy_backend.hpp"

namespace eve {
namespace fs = std::filesystem;
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double latent_rms(const LatentState& z) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& f : z.frames) {
    sq += dot(f.data, f.data);
    n += f.size();
  }
  return n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
}

// Runs `fn`, re-tagging any failure with `stage`.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    retag(e, stage);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::backend, stage, e.what());
  }
}

}  // namespace

void validate(const EditConfig& cfg) {
  if (cfg.frames < 1) throw config_error("frames must be >= 1");
  if (cfg.steps < 1) throw config_error("steps must be >= 1");
  if (cfg.train_steps < 1) throw config_error("train_steps must be >= 1");
  if (cfg.steps > cfg.train_steps) throw config_error("steps must not exceed train_steps");
  if (cfg.resolution < 16 || cfg.resolution % 16 != 0) {
    throw config_error("resolution must be a positive multiple of 16 (latent downscale 8 times UNet stride 2)");
  }
  if (!std::isfinite(cfg.learning_rate) || cfg.learning_rate < 0.0) throw config_error("lr must be >= 0");
  if (cfg.backend != "toy" && cfg.backend != "pretrained") {
    throw config_error("backend must be 'toy' or 'pretrained'");
  }
  if (cfg.backend == "pretrained" && cfg.weights.empty()) {
    throw config_error("the pretrained backend needs a weights file");
  }
  if (cfg.depth_backend != "stub" && cfg.depth_backend != "http") {
    throw config_error("depth backend must be 'stub' or 'http'");
  }
  if (cfg.depth_backend == "http" && cfg.depth_url.empty()) throw config_error("http depth backend needs a URL");
  if (cfg.beta_schedule != "default" && cfg.beta_schedule != "linear" && cfg.beta_schedule != "scaled-linear") {
    throw config_error("beta schedule must be default, linear or scaled-linear");
  }
  if (!std::isfinite(cfg.guidance_scale)) throw config_error("guidance scale must be finite");
}

NoiseSchedule make_schedule(const EditConfig& cfg) {
  BetaSpec betas = cfg.backend == "toy" ? BetaSpec::toy_default() : BetaSpec::pretrained_default();
  if (cfg.beta_schedule == "linear") betas = BetaSpec::toy_default();
  if (cfg.beta_schedule == "scaled-linear") betas = BetaSpec::pretrained_default();
  return build_schedule(cfg.train_steps, cfg.steps, betas);
}

std::unique_ptr<Backend> make_backend(const EditConfig& cfg) {
  if (cfg.backend == "toy") {
    ToyBackendSpec spec;
    spec.seed = cfg.seed;
    spec.train_steps = cfg.train_steps;
    return std::make_unique<ToyBackend>(spec);
  }
  if (cfg.backend == "pretrained") return std::make_unique<ToyBackend>(ToyBackend::load(cfg.weights));
  throw config_error("unknown backend " + cfg.backend);
}

std::unique_ptr<DepthEstimator> make_depth_estimator(const EditConfig& cfg) {
  if (cfg.depth_backend == "stub") return std::make_unique<StubDepthEstimator>();
  const char* token = std::getenv("EVE_DEPTH_TOKEN");
  return std::make_unique<HttpDepthEstimator>(cfg.depth_url, token != nullptr ? token : "");
}

std::vector<int> sample_frame_indices(int available, int k) {
  if (k < 1) throw config_error("frame count must be >= 1", "sample");
  if (available < k) {
    throw io_error("video has " + std::to_string(available) + " frames, " + std::to_string(k) + " requested",
                   "sample");
  }
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = static_cast<int>(static_cast<long long>(i) * available / k);
  return idx;
}

std::vector<Image> sample_frames(std::span<const Image> video, int k) {
  std::vector<Image> out;
  for (int i : sample_frame_indices(static_cast<int>(video.size()), k)) out.push_back(video[i]);
  return out;
}

LatentState encode_frames(std::span<const Image> frames, const Backend& backend) {
  LatentState z;
  z.frames.reserve(frames.size());
  for (const auto& f : frames) z.frames.push_back(backend.encode_image(f));
  return z;
}

std::vector<Image> decode_frames(const LatentState& z, const Backend& backend) {
  std::vector<Image> out;
  out.reserve(z.frames.size());
  for (const auto& f : z.frames) out.push_back(backend.decode_latent(f));
  return out;
}

LatentState invert(const LatentState& z0, const DepthFeatures* depth, const NoiseSchedule& sched,
                   const Backend& backend, const InversionOptions& opt, const StepObserver& observe) {
  LatentState z = z0;
  z.step_index = 0;
  for (int step = 1; step <= sched.ddim_steps(); ++step) {
    // Noise is predicted from the current latent at the target timestep.
    const NoiseRequest req{z.frames, sched.timestep(step), nullptr, depth, opt.attention};
    const auto eps = backend.predict_noise(req);
    z = ddim_invert_step(z, step, eps, sched, opt.ddim_form);
    if (observe) observe(z);
  }
  return z;
}

LatentState denoise(const LatentState& z_t, const PromptEmbedding& prompt, const DepthFeatures* depth,
                    const NoiseSchedule& sched, const Backend& backend, const OptimizerConfig& cfg,
                    const StepObserver& observe) {
  LatentState z = z_t;
  z.step_index = sched.ddim_steps();
  for (int step = sched.ddim_steps(); step >= 1; --step) {
    const NoiseRequest req{z.frames, sched.timestep(step), &prompt, depth, cfg.attention};
    const auto eps = guided_noise(backend, req, prompt, cfg.guidance_scale);
    z = ddim_denoise_step(z, step, eps, sched, cfg.ddim_form);
    if (observe) observe(z);
  }
  return z;
}

LatentState denoise_optimized(const LatentState& z_t, const PromptEmbedding& prompt, const DepthFeatures* depth,
                              const NoiseSchedule& sched, const Backend& backend, const OptimizerConfig& cfg,
                              std::vector<OptimizerTraceRow>* trace, const StepObserver& observe) {
  LatentState z = z_t;
  z.step_index = sched.ddim_steps();
  const OptimizerHook hook = [trace](const OptimizerTraceRow& row) {
    if (trace != nullptr) trace->push_back(row);
  };
  for (int step = sched.ddim_steps(); step >= 1; --step) {
    z = optimize_step({z, step, prompt, depth}, sched, backend, cfg, hook);
    if (observe) observe(z);
  }
  return z;
}

EditResult edit(const EditConfig& cfg, std::span<const Image> frames, const Backend& backend,
                const DepthEstimator& depth_estimator) {
  validate(cfg);
  if (static_cast<int>(frames.size()) != cfg.frames) {
    throw config_error("expected " + std::to_string(cfg.frames) + " frames, got " + std::to_string(frames.size()));
  }
  for (const auto& f : frames) {
    if (f.height != cfg.resolution || f.width != cfg.resolution) {
      throw config_error("frames must be preprocessed to the working resolution");
    }
  }
  const auto total0 = Clock::now();
  EditResult r;
  r.config = cfg;
  const NoiseSchedule sched = make_schedule(cfg);
  InstrumentedBackend counted(backend);

  auto t0 = Clock::now();
  const LatentState z0 = staged("encode", [&] { return encode_frames(frames, counted); });
  r.timings.encode = seconds_since(t0);

  t0 = Clock::now();
  std::optional<DepthFeatures> depth;
  if (cfg.depth_guidance) {
    depth = staged("depth", [&] {
      const auto maps = estimate_depth(frames, depth_estimator);
      DepthFeatures m = counted.encode_depth(maps);
      const auto shapes = counted.stage_shapes(z0.frames[0].height, z0.frames[0].width);
      validate_depth_features(m, static_cast<int>(frames.size()), shapes);
      return m;
    });
  }
  const DepthFeatures* m = depth ? &*depth : nullptr;
  const PromptEmbedding prompt =
      staged("text", [&] { return cfg.prompt.empty() ? counted.null_prompt() : counted.encode_text(cfg.prompt); });
  r.timings.depth = seconds_since(t0);

  t0 = Clock::now();
  counted.reset();
  r.inverted = staged("invert", [&] {
    return invert(z0, m, sched, counted, {cfg.attention, cfg.ddim_form},
                  [&](const LatentState& z) { r.inversion_rms.push_back(latent_rms(z)); });
  });
  r.inversion_evals = counted.noise_evaluations();
  r.timings.inversion = seconds_since(t0);

  t0 = Clock::now();
  counted.reset();
  const OptimizerConfig ocfg{cfg.learning_rate, GradientMode::analytic, cfg.effective_guidance(), cfg.attention,
                             cfg.ddim_form};
  const auto observe = [&](const LatentState& z) { r.denoise_rms.push_back(latent_rms(z)); };
  r.edited = staged("denoise", [&] {
    return cfg.optimize ? denoise_optimized(r.inverted, prompt, m, sched, counted, ocfg, &r.trace, observe)
                        : denoise(r.inverted, prompt, m, sched, counted, ocfg, observe);
  });
  r.denoise_evals = counted.noise_evaluations();
  r.timings.denoise = seconds_since(t0);

  t0 = Clock::now();
  r.frames = staged("decode", [&] { return decode_frames(r.edited, counted); });
  r.timings.decode = seconds_since(t0);
  r.timings.total = seconds_since(total0);
  return r;
}

std::vector<Image> load_frames(const EditConfig& cfg) {
  return staged("load", [&] {
    if (cfg.video.empty()) throw config_error("no video source given");
    const auto video = read_video(cfg.video);
    auto frames = sample_frames(video, cfg.frames);
    for (auto& f : frames) f = preprocess_frame(f, cfg.resolution);
    return frames;
  });
}

nlohmann::json config_to_json(const EditConfig& cfg) {
  return {{"video", cfg.video},
          {"prompt", cfg.prompt},
          {"frames", cfg.frames},
          {"resolution", cfg.resolution},
          {"steps", cfg.steps},
          {"train_steps", cfg.train_steps},
          {"beta_schedule", cfg.beta_schedule},
          {"lr", cfg.learning_rate},
          {"attn", std::string(to_string(cfg.attention))},
          {"dmg", cfg.depth_guidance},
          {"backend", cfg.backend},
          {"weights", cfg.weights},
          {"depth_backend", cfg.depth_backend},
          {"seed", cfg.seed},
          {"guidance_scale", cfg.effective_guidance()},
          {"optimize", cfg.optimize},
          {"ddim_form", cfg.ddim_form == DdimForm::exact ? "exact" : "as-written"}};
}

nlohmann::json result_to_json(const EditResult& r) {
  nlohmann::json j;
  j["schema_version"] = kResultSchemaVersion;
  j["config"] = config_to_json(r.config);
  j["frames"] = r.frames.size();
  j["noise_evaluations"] = {{"inversion", r.inversion_evals}, {"denoising", r.denoise_evals}};
  j["timings_seconds"] = {{"encode", r.timings.encode},       {"depth", r.timings.depth},
                          {"inversion", r.timings.inversion}, {"denoise", r.timings.denoise},
                          {"decode", r.timings.decode},       {"total", r.timings.total}};
  j["trajectory"] = {{"inversion_rms", r.inversion_rms}, {"denoise_rms", r.denoise_rms}};
  return j;
}

void write_atomically(const fs::path& dir, const std::function<void(const fs::path&)>& fill) {
  static std::atomic<int> counter{0};
  const fs::path target = fs::absolute(dir);
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp-" + std::to_string(::getpid()) +
                                               "-" + std::to_string(counter++));
  fs::remove_all(tmp, ec);
  if (!fs::create_directories(tmp, ec)) throw io_error("cannot create " + tmp.string(), "write");
  try {
    fill(tmp);
    if (fs::exists(target)) {
      if (!fs::is_directory(target) || (!fs::is_empty(target) && !fs::exists(target / "result.json"))) {
        throw io_error("refusing to replace " + target.string() + ": not a previous result directory", "write");
      }
      fs::remove_all(target);
    }
    fs::rename(tmp, target);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(tmp, ec);
    throw io_error(e.what(), "write");
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

void write_edit_outputs(const EditResult& result, const fs::path& dir) {
  write_atomically(dir, [&](const fs::path& tmp) {
    fs::create_directories(tmp / "frames");
    for (std::size_t k = 0; k < result.frames.size(); ++k) {
      std::ostringstream name;
      name << std::setw(3) << std::setfill('0') << k << ".png";
      write_png(tmp / "frames" / name.str(), result.frames[k]);
    }
    std::ofstream rj(tmp / "result.json");
    rj << result_to_json(result).dump(2) << '\n';
    std::ofstream tc(tmp / "trace.csv");
    tc << "step,timestep,loss_before,loss_after,grad_norm,numeric_gap\n" << std::setprecision(17);
    for (const auto& row : result.trace) {
      tc << row.step << ',' << row.timestep << ',' << row.loss_before << ',' << row.loss_after << ','
         << row.grad_norm << ',' << row.numeric_gap << '\n';
    }
    if (!rj || !tc) throw io_error("failed writing result files", "write");
  });
}

EditResult run_edit(const EditConfig& cfg) {
  validate(cfg);
  if (cfg.output_dir.empty()) throw config_error("no output directory given");
  const auto frames = load_frames(cfg);
  const auto backend = staged("backend", [&] { return make_backend(cfg); });
  const auto estimator = staged("depth", [&] { return make_depth_estimator(cfg); });
  EditResult r = edit(cfg, frames, *backend, *estimator);
  staged("write", [&] {
    write_edit_outputs(r, cfg.output_dir);
    return 0;
  });
  return r;
}

}  // namespace eve
