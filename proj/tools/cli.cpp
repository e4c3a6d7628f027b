#include "cli.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "eve/dataset.hpp"
#include "eve/frames_io.hpp"
#include "eve/metrics.hpp"
#include "eve/pipeline.hpp"

namespace eve::cli {
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<AblationCell> ablation_grid(std::string_view name) {
  if (name != "table1") throw config_error("unknown ablation grid '" + std::string(name) + "'", "ablate");
  using AM = AttentionMode;
  // B5 and A2 share one configuration; the off/SCA cell completes the DMG x attention grid.
  return {
      {"B1", {"B1"}, false, AM::self},
      {"B2", {"B2"}, false, AM::frame_align},
      {"B3", {"B3"}, true, AM::self},
      {"B4", {"B4"}, true, AM::sparse_causal},
      {"B5-A2", {"B5", "A2"}, true, AM::frame_align},
      {"X-off-sca", {}, false, AM::sparse_causal},
  };
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kExitConfig;
    case ErrorKind::backend: return kExitBackend;
    case ErrorKind::io: return kExitIo;
    case ErrorKind::numeric: return kExitFailure;
  }
  return kExitFailure;
}

namespace {

class Log {
 public:
  Log(std::ostream& err, const bool& quiet) : err_(err), quiet_(quiet) {}
  void info(const std::string& msg) const {
    if (quiet_) return;
    std::lock_guard lock(mu_);
    err_ << "eve: " << msg << '\n';
  }
  void error(const std::string& msg) const {
    std::lock_guard lock(mu_);
    err_ << "eve: error: " << msg << '\n';
  }

 private:
  std::ostream& err_;
  const bool& quiet_;
  mutable std::mutex mu_;
};

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v != nullptr ? v : "";
}

// Accepts both a flat key-value file (keys apply to the selected subcommand)
// and a file with one [<subcommand>] section per command.
class FlatConfig final : public CLI::ConfigTOML {
 public:
  explicit FlatConfig(const CLI::App& app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    const auto subs = app_.get_subcommands();
    if (subs.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty() && app_.get_option_no_throw("--" + item.name) == nullptr) {
        item.parents.push_back(subs.front()->get_name());
      }
    }
    return items;
  }

 private:
  const CLI::App& app_;
};

struct EditFlags {
  EditConfig cfg;
  std::string attn = "faa";
  std::string dmg = "on";
  std::string optimize = "on";
  std::string ddim_form = "exact";

  EditConfig resolve() const {
    EditConfig c = cfg;
    c.attention = parse_attention_mode(attn);
    c.depth_guidance = dmg == "on";
    c.optimize = optimize == "on";
    c.ddim_form = ddim_form == "exact" ? DdimForm::exact : DdimForm::as_written;
    return c;
  }
};

enum OptionGroups : unsigned {
  kDenoise = 1u << 0,    // prompt, lr, guidance, optimize
  kAttention = 1u << 1,  // attn, dmg
};

void add_edit_options(CLI::App& sub, EditFlags& f, unsigned groups, const std::string& default_output) {
  const auto on_off = CLI::IsMember({"on", "off"});
  sub.add_option("--video", f.cfg.video, "Video file or directory of frames");
  sub.add_option("--frames", f.cfg.frames, "Frames sampled uniformly from the video")->capture_default_str();
  sub.add_option("--resolution", f.cfg.resolution, "Working resolution (multiple of 16)")->capture_default_str();
  sub.add_option("--steps", f.cfg.steps, "DDIM steps")->capture_default_str();
  sub.add_option("--train-steps", f.cfg.train_steps, "Training timesteps of the noise schedule")
      ->capture_default_str();
  sub.add_option("--beta-schedule", f.cfg.beta_schedule, "default | linear | scaled-linear")
      ->check(CLI::IsMember({"default", "linear", "scaled-linear"}))
      ->capture_default_str();
  if (groups & kAttention) {
    sub.add_option("--attn", f.attn, "Self-attention variant: sa | faa | sca")
        ->check(CLI::IsMember({"sa", "faa", "sca"}))
        ->capture_default_str();
    sub.add_option("--dmg", f.dmg, "Depth map guidance: on | off")->check(on_off)->capture_default_str();
  }
  if (groups & kDenoise) {
    sub.add_option("--prompt", f.cfg.prompt, "Edit prompt");
    sub.add_option("--lr", f.cfg.learning_rate, "Latent optimisation step size")->capture_default_str();
    sub.add_option("--guidance", f.cfg.guidance_scale, "Classifier-free guidance scale (<0: backend default)")
        ->capture_default_str();
    sub.add_option("--optimize", f.optimize, "Per-step latent refinement: on | off")
        ->check(on_off)
        ->capture_default_str();
  }
  sub.add_option("--ddim-form", f.ddim_form, "exact | as-written")
      ->check(CLI::IsMember({"exact", "as-written"}))
      ->capture_default_str();
  sub.add_option("--backend", f.cfg.backend, "toy | pretrained")
      ->check(CLI::IsMember({"toy", "pretrained"}))
      ->capture_default_str();
  sub.add_option("--weights", f.cfg.weights, "Weight file for the pretrained backend");
  sub.add_option("--depth-backend", f.cfg.depth_backend, "stub | http")
      ->check(CLI::IsMember({"stub", "http"}))
      ->capture_default_str();
  sub.add_option("--depth-url", f.cfg.depth_url, "Depth service base URL")->envname("EVE_DEPTH_URL");
  sub.add_option("--seed", f.cfg.seed, "Toy model seed")->capture_default_str();
  f.cfg.output_dir = default_output;
  sub.add_option("-o,--output", f.cfg.output_dir, "Output directory")->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw io_error("cannot write " + tmp.string(), "write");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("cannot move " + path.string() + " into place: " + ec.message(), "write");
}

std::string fixed2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

int cmd_edit(const EditFlags& f, std::ostream& out, const Log& log) {
  const EditConfig cfg = f.resolve();
  log.info("editing " + cfg.video + " (" + std::to_string(cfg.frames) + " frames, " + std::to_string(cfg.steps) +
           " steps, attn " + std::string(to_string(cfg.attention)) + ", dmg " + (cfg.depth_guidance ? "on" : "off") +
           ")");
  const EditResult r = run_edit(cfg);
  log.info("inversion " + fixed2(r.timings.inversion) + " s, denoising " + fixed2(r.timings.denoise) + " s");
  out << fs::absolute(cfg.output_dir).string() << '\n';
  return kExitOk;
}

double rmse(std::span<const Image> a, std::span<const Image> b) {
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double d = a[k].data[i] - b[k].data[i];
      sq += d * d;
    }
    n += a[k].size();
  }
  return n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
}

int cmd_invert(const EditFlags& f, bool reconstruct, std::ostream& out, const Log& log) {
  EditConfig cfg = f.resolve();
  cfg.optimize = false;
  validate(cfg);
  const auto frames = load_frames(cfg);
  const auto backend = make_backend(cfg);
  const auto estimator = make_depth_estimator(cfg);
  const NoiseSchedule sched = make_schedule(cfg);
  InstrumentedBackend counted(*backend);

  const LatentState z0 = encode_frames(frames, counted);
  std::optional<DepthFeatures> depth;
  if (cfg.depth_guidance) depth = counted.encode_depth(estimate_depth(frames, *estimator));
  const DepthFeatures* m = depth ? &*depth : nullptr;
  log.info("inverting " + std::to_string(frames.size()) + " frames over " + std::to_string(cfg.steps) + " steps");
  std::vector<double> rms;
  const LatentState zt = invert(z0, m, sched, counted, {cfg.attention, cfg.ddim_form}, [&](const LatentState& z) {
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& t : z.frames) {
      sq += dot(t.data, t.data);
      n += t.size();
    }
    rms.push_back(std::sqrt(sq / static_cast<double>(n)));
  });

  json j;
  j["schema_version"] = kResultSchemaVersion;
  j["command"] = "invert";
  j["config"] = config_to_json(cfg);
  j["noise_evaluations"] = {{"inversion", counted.noise_evaluations()}};
  const auto& t0 = zt.frames.front();
  j["latent_shape"] = {static_cast<int>(zt.frames.size()), t0.channels, t0.height, t0.width};
  std::vector<double> flat;
  for (const auto& t : zt.frames) flat.insert(flat.end(), t.data.begin(), t.data.end());
  j["latents"] = flat;
  j["inversion_rms"] = rms;

  std::vector<Image> recon;
  if (reconstruct) {
    const OptimizerConfig ocfg{0.0, GradientMode::analytic, cfg.effective_guidance(), cfg.attention, cfg.ddim_form};
    recon = decode_frames(denoise(zt, counted.null_prompt(), m, sched, counted, ocfg), counted);
    j["reconstruction_rmse"] = rmse(recon, frames);
    log.info("reconstruction RMSE " + std::to_string(j["reconstruction_rmse"].get<double>()));
  }
  write_atomically(cfg.output_dir, [&](const fs::path& tmp) {
    if (!recon.empty()) {
      fs::create_directories(tmp / "frames");
      for (std::size_t k = 0; k < recon.size(); ++k) {
        std::ostringstream name;
        name << std::setw(3) << std::setfill('0') << k << ".png";
        write_png(tmp / "frames" / name.str(), recon[k]);
      }
    }
    write_text(tmp / "result.json", j.dump(2) + "\n");
  });
  out << fs::absolute(cfg.output_dir).string() << '\n';
  return kExitOk;
}

struct EvalFlags {
  std::string frames;
  std::string prompt;
  bool pc = false;
  bool no_tc = false;
  std::string embedder = "toy";
  std::string embedder_url;
  int embedder_resolution = 224;
  bool pairs_csv = false;
  std::string output = "results/eval";
};

int cmd_eval(const EvalFlags& f, std::ostream& out, const Log& log) {
  if (f.frames.empty()) throw config_error("eval needs --frames");
  if (f.pc && f.prompt.empty()) throw config_error("--pc needs a non-empty --prompt");
  if (f.no_tc && f.prompt.empty()) throw config_error("nothing to evaluate: TC disabled and no prompt given");
  std::unique_ptr<JointEmbedder> embedder;
  if (f.embedder == "toy") {
    embedder = std::make_unique<ToyEmbedder>();
  } else {
    if (f.embedder_url.empty()) throw config_error("the http embedder needs --embedder-url");
    embedder = std::make_unique<HttpEmbedder>(f.embedder_url, env_or_empty("EVE_EMBEDDER_TOKEN"),
                                              f.embedder_resolution);
  }
  const auto frames = read_video(f.frames);
  log.info("evaluating " + std::to_string(frames.size()) + " frames with the " + embedder->name() + " embedder");
  const MetricsReport report = evaluate(frames, *embedder, !f.no_tc, f.prompt);
  std::error_code ec;
  fs::create_directories(f.output, ec);
  if (ec) throw io_error("cannot create " + f.output + ": " + ec.message(), "write");
  write_text(fs::path(f.output) / "metrics.json", report_to_json(report).dump(2) + "\n");
  if (f.pairs_csv) write_text(fs::path(f.output) / "pairs.csv", pairs_csv(report));
  if (report.temporal) out << "TC " << fixed2(report.temporal->score) << '\n';
  if (report.prompt) out << "PC " << fixed2(report.prompt->score) << '\n';
  return kExitOk;
}

struct DatasetFlags {
  std::string videos;
  std::string source = "local";
  std::string manifest = "results/dataset/manifest.jsonl";
  std::string captioner = "stub";
  std::string captioner_url;
  std::string llm = "stub";
  std::string llm_url;
  std::string templates;
  int candidates = 5;
  int jobs = 4;
};

int cmd_dataset_build(const DatasetFlags& f, std::ostream& out, const Log& log) {
  if (f.videos.empty()) throw config_error("dataset-build needs --videos");
  std::unique_ptr<Captioner> captioner;
  if (f.captioner == "stub") {
    captioner = std::make_unique<StubCaptioner>();
  } else {
    if (f.captioner_url.empty()) throw config_error("the http captioner needs --captioner-url");
    captioner = std::make_unique<HttpCaptioner>(f.captioner_url, env_or_empty("EVE_CAPTIONER_TOKEN"));
  }
  std::unique_ptr<PromptWriter> writer;
  if (f.llm == "stub") {
    writer = std::make_unique<StubPromptWriter>();
  } else {
    if (f.llm_url.empty()) throw config_error("the http prompt writer needs --llm-url");
    writer = std::make_unique<HttpPromptWriter>(f.llm_url, env_or_empty("EVE_LLM_TOKEN"));
  }
  BuildOptions opt;
  opt.caption_candidates = f.candidates;
  opt.max_in_flight = f.jobs;
  if (!f.templates.empty()) opt.templates = load_templates(f.templates);

  const auto videos = discover_videos(f.videos, parse_video_source(f.source));
  log.info("building records for " + std::to_string(videos.size()) + " videos");
  const BuildResult result = build_dataset(videos, *captioner, *writer, opt);
  for (const auto& fail : result.failures) log.error(fail.video_id + ": " + fail.message);
  const fs::path manifest(f.manifest);
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  write_manifest(result.records, manifest);
  out << "records " << result.records.size() << " failures " << result.failures.size() << '\n';
  return result.failures.empty() ? kExitOk : kExitBackend;
}

struct ReviewFlags {
  std::string manifest;
  std::string id;
  std::string decision = "none";
  std::string note;
};

int cmd_dataset_review(const ReviewFlags& f, std::ostream& out, const Log& log) {
  if (f.manifest.empty() || f.id.empty()) throw config_error("dataset-review needs --manifest and --id");
  auto records = read_manifest(f.manifest);
  const ReviewDecision decision = f.decision == "approve"  ? ReviewDecision::approve
                                  : f.decision == "reject" ? ReviewDecision::reject
                                                           : ReviewDecision::none;
  const DatasetRecord& r = review_record(records, f.id, decision, f.note);
  out << "video_id:    " << r.video_id << '\n'
      << "source:      " << to_string(r.source) << '\n'
      << "first frame: " << first_frame_path(r) << '\n'
      << "caption:     " << r.caption << '\n';
  for (Category c : kCategories) {
    const auto it = r.prompts.find(c);
    out << "  " << to_string(c) << ": " << (it == r.prompts.end() ? "(missing)" : it->second) << '\n';
  }
  out << "verified:    " << (r.verified ? "yes" : "no") << '\n';
  if (!r.note.empty()) out << "note:        " << r.note << '\n';
  if (decision != ReviewDecision::none || !f.note.empty()) {
    write_manifest(records, f.manifest);
    log.info("recorded decision '" + f.decision + "' for " + f.id);
  }
  return kExitOk;
}

int cmd_ablate(const EditFlags& f, const std::string& grid_name, int jobs, std::ostream& out, const Log& log) {
  if (jobs < 1) throw config_error("--jobs must be at least 1");
  const auto grid = ablation_grid(grid_name);
  const EditConfig base = f.resolve();
  validate(base);
  const fs::path root(base.output_dir);
  std::vector<EditConfig> configs;
  for (const auto& cell : grid) {
    EditConfig c = base;
    c.depth_guidance = cell.depth_guidance;
    c.attention = cell.attention;
    c.output_dir = (root / cell.name).string();
    configs.push_back(std::move(c));
  }

  std::vector<std::string> errors(grid.size());
  std::vector<int> codes(grid.size(), kExitOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      log.info("ablation cell " + grid[i].name + " started");
      try {
        run_edit(configs[i]);
        log.info("ablation cell " + grid[i].name + " done");
      } catch (const Error& e) {
        errors[i] = e.what();
        codes[i] = exit_code(e.kind());
      } catch (const std::exception& e) {
        errors[i] = e.what();
        codes[i] = kExitFailure;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(jobs, static_cast<int>(grid.size())); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  json cells = json::array();
  int code = kExitOk;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!errors[i].empty()) {
      log.error("ablation cell " + grid[i].name + ": " + errors[i]);
      if (code == kExitOk) code = codes[i];
    }
    cells.push_back({{"name", grid[i].name},
                     {"rows", grid[i].rows},
                     {"dmg", grid[i].depth_guidance},
                     {"attn", std::string(to_string(grid[i].attention))},
                     {"dir", grid[i].name},
                     {"status", errors[i].empty() ? "ok" : "failed"}});
  }
  fs::create_directories(root);
  const json index = {{"schema_version", kResultSchemaVersion}, {"grid", grid_name}, {"cells", cells}};
  write_text(root / "grid.json", index.dump(2) + "\n");
  out << fs::absolute(root).string() << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot text-driven video editing with depth guidance and frame-aligned attention", "eve"};
  app.set_config("--config", "", "TOML/INI file of option values, flat or in [<subcommand>] sections");
  app.config_formatter(std::make_shared<FlatConfig>(app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log errors");
  const Log log(err, quiet);

  EditFlags edit_flags;
  auto* edit = app.add_subcommand("edit", "Edit a video from a text prompt");
  add_edit_options(*edit, edit_flags, kDenoise | kAttention, "results/edit");

  EditFlags invert_flags;
  bool reconstruct = false;
  auto* inv = app.add_subcommand("invert", "DDIM-invert a video and store the noised latents");
  add_edit_options(*inv, invert_flags, kAttention, "results/invert");
  inv->add_flag("--reconstruct", reconstruct, "Also denoise back without a prompt and store the frames");

  EvalFlags eval_flags;
  auto* ev = app.add_subcommand("eval", "Temporal and prompt consistency of a frame sequence");
  ev->add_option("--frames", eval_flags.frames, "Directory of frames or a video file");
  ev->add_option("--prompt", eval_flags.prompt, "Prompt for prompt consistency");
  ev->add_flag("--pc", eval_flags.pc, "Require prompt consistency");
  ev->add_flag("--no-tc", eval_flags.no_tc, "Skip temporal consistency");
  ev->add_option("--embedder", eval_flags.embedder, "toy | http")
      ->check(CLI::IsMember({"toy", "http"}))
      ->capture_default_str();
  ev->add_option("--embedder-url", eval_flags.embedder_url, "Embedding service base URL")
      ->envname("EVE_EMBEDDER_URL");
  ev->add_option("--embedder-resolution", eval_flags.embedder_resolution, "Input side length of the http embedder")
      ->capture_default_str();
  ev->add_flag("--pairs-csv", eval_flags.pairs_csv, "Also write per-pair similarities as CSV");
  ev->add_option("-o,--output", eval_flags.output, "Output directory")->capture_default_str();

  DatasetFlags ds;
  auto* build = app.add_subcommand("dataset-build", "Caption videos and write four edit prompts per video");
  build->add_option("--videos", ds.videos, "Directory holding one frame directory or video file per video");
  build->add_option("--source", ds.source, "davis | footage | local")
      ->check(CLI::IsMember({"davis", "footage", "local"}))
      ->capture_default_str();
  build->add_option("-o,--manifest", ds.manifest, "Output manifest (JSON lines)")->capture_default_str();
  build->add_option("--captioner", ds.captioner, "stub | http")
      ->check(CLI::IsMember({"stub", "http"}))
      ->capture_default_str();
  build->add_option("--captioner-url", ds.captioner_url, "Captioning service base URL")
      ->envname("EVE_CAPTIONER_URL");
  build->add_option("--llm", ds.llm, "stub | http")->check(CLI::IsMember({"stub", "http"}))->capture_default_str();
  build->add_option("--llm-url", ds.llm_url, "Prompt-writing service base URL")->envname("EVE_LLM_URL");
  build->add_option("--templates", ds.templates, "JSON file overriding the instruction templates");
  build->add_option("--candidates", ds.candidates, "Caption candidates per video")->capture_default_str();
  build->add_option("--jobs", ds.jobs, "Videos processed concurrently")->capture_default_str();

  ReviewFlags rv;
  auto* review = app.add_subcommand("dataset-review", "Show a manifest record and record a review decision");
  review->add_option("--manifest", rv.manifest, "Manifest (JSON lines)");
  review->add_option("--id", rv.id, "video_id of the record");
  review->add_option("--decision", rv.decision, "none | approve | reject")
      ->check(CLI::IsMember({"none", "approve", "reject"}))
      ->capture_default_str();
  review->add_option("--note", rv.note, "Reviewer remark stored with the record");

  EditFlags ablate_flags;
  std::string grid = "table1";
  int jobs = 1;
  auto* ablate = app.add_subcommand("ablate", "Run every configuration of an ablation grid");
  add_edit_options(*ablate, ablate_flags, kDenoise, "results/ablate");
  ablate->add_option("--grid", grid, "Grid name")->check(CLI::IsMember({"table1"}))->capture_default_str();
  ablate->add_option("--jobs", jobs, "Concurrent runs")->capture_default_str();

  std::vector<const char*> argv{"eve"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*edit) return cmd_edit(edit_flags, out, log);
    if (*inv) return cmd_invert(invert_flags, reconstruct, out, log);
    if (*ev) return cmd_eval(eval_flags, out, log);
    if (*build) return cmd_dataset_build(ds, out, log);
    if (*review) return cmd_dataset_review(rv, out, log);
    if (*ablate) return cmd_ablate(ablate_flags, grid, jobs, out, log);
  } catch (const Error& e) {
    log.error(e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitFailure;
  }
  return kExitFailure;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace eve::cli
