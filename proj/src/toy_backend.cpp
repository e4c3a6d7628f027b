#include "eve/toy_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "eve/error.hpp"
#include "init.hpp"

namespace eve {
namespace {

constexpr double kNormEps = 1e-5;

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Matrix layer_norm(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= x.cols;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= x.cols;
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    auto o = out.row(r);
    for (int c = 0; c < x.cols; ++c) o[c] = (row[c] - mean) * inv;
  }
  return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void add_inplace(Tensor3& a, const Tensor3& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void add_channel_bias(Tensor3& t, std::span<const double> bias) {
  for (int c = 0; c < t.channels; ++c) {
    for (double& v : t.channel(c)) v += bias[c];
  }
}

Tensor3 upsample_nearest(const Tensor3& in, int factor) {
  Tensor3 out(in.channels, in.height * factor, in.width * factor);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / factor, x / factor);
    }
  }
  return out;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  std::vector<double> out(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out[r] += m(r, c) * v[c];
  }
  return out;
}

// (A^T A)^{-1} A^T for a full-column-rank (n x 3) matrix.
Matrix pseudo_inverse_cols3(const Matrix& a) {
  double g[3][3] = {};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int r = 0; r < a.rows; ++r) g[i][j] += a(r, i) * a(r, j);
    }
  }
  const double det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
                     g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
                     g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
  if (std::abs(det) < 1e-12) throw backend_error("colour mix matrix is rank deficient", "toy-backend");
  double inv[3][3];
  inv[0][0] = (g[1][1] * g[2][2] - g[1][2] * g[2][1]) / det;
  inv[0][1] = (g[0][2] * g[2][1] - g[0][1] * g[2][2]) / det;
  inv[0][2] = (g[0][1] * g[1][2] - g[0][2] * g[1][1]) / det;
  inv[1][0] = (g[1][2] * g[2][0] - g[1][0] * g[2][2]) / det;
  inv[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / det;
  inv[1][2] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / det;
  inv[2][0] = (g[1][0] * g[2][1] - g[1][1] * g[2][0]) / det;
  inv[2][1] = (g[0][1] * g[2][0] - g[0][0] * g[2][1]) / det;
  inv[2][2] = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / det;
  Matrix out(3, a.rows);
  for (int i = 0; i < 3; ++i) {
    for (int r = 0; r < a.rows; ++r) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) s += inv[i][j] * a(r, j);
      out(i, r) = s;
    }
  }
  return out;
}

std::vector<std::string> words_of(std::string_view prompt) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : prompt) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc) || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<double> sinusoid(double position, int width) {
  std::vector<double> e(width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
    e[2 * i] = std::sin(position * freq);
    e[2 * i + 1] = std::cos(position * freq);
  }
  return e;
}

}  // namespace

ToyBackend::ToyBackend(const ToyBackendSpec& spec) : spec_(spec), depth_encoder_([&] {
  if (spec.channels.size() != 2) throw config_error("toy UNet has exactly two levels", "toy-backend");
  if (spec.downscale % 2 != 0 || spec.downscale < 2) throw config_error("downscale must be even", "toy-backend");
  DepthEncoderSpec d = spec.depth;
  d.stage_channels = spec.channels;
  d.stem = spec.downscale / 2;
  return d;
}()) {
  spec_.depth.stage_channels = spec_.channels;
  spec_.depth.stem = spec_.downscale / 2;
  init_weights();
  finish_init();
}

void ToyBackend::init_weights() {
  detail::Rng rng(spec_.seed);
  const int c0 = spec_.channels[0];
  const int c1 = spec_.channels[1];
  const int lc = spec_.latent_channels;

  color_mix_ = detail::random_matrix(lc, 3, rng, std::sqrt(3.0));
  time_proj0_ = detail::random_matrix(c0, c0, rng, 0.5);
  time_proj1_ = detail::random_matrix(c1, c0, rng, 0.5);
  conv_in_ = detail::random_conv(c0, lc, 3, rng, 1.0, true);

  auto make_block = [&](int c) {
    ConvAttnBlock b;
    b.conv = detail::random_conv(c, c, 3, rng, 0.5, true);
    b.self_attn = {detail::random_matrix(c, c, rng), detail::random_matrix(c, c, rng),
                   detail::random_matrix(c, c, rng, 0.5)};
    b.cross_attn = {detail::random_matrix(c, c, rng), detail::random_matrix(c, spec_.text_dim, rng),
                    detail::random_matrix(c, spec_.text_dim, rng, 0.5)};
    b.ffn_in = detail::random_matrix(2 * c, c, rng);
    b.ffn_out = detail::random_matrix(c, 2 * c, rng, 0.5);
    return b;
  };
  down0_ = make_block(c0);
  down_conv_ = detail::random_conv(c1, c0, 3, rng, 1.0, true);
  down1_ = make_block(c1);
  up_conv_ = detail::random_conv(c0, c1, 3, rng, 1.0, true);
  up0_ = make_block(c0);
  conv_out_ = detail::random_conv(lc, c0, 3, rng, spec_.output_gain, true);

  bos_token_.resize(spec_.text_dim);
  pad_token_.resize(spec_.text_dim);
  detail::fill_normal(bos_token_, rng, 1.0);
  detail::fill_normal(pad_token_, rng, 1.0);
}

void ToyBackend::finish_init() {
  color_unmix_ = pseudo_inverse_cols3(color_mix_);
  const NoiseSchedule prior = build_schedule(spec_.train_steps, 1, spec_.prior_betas);
  prior_alpha_bars_.assign(prior.alpha_bars().begin(), prior.alpha_bars().end());
  null_prompt_ = encode_text("");
}

void ToyBackend::for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  fn("color_mix", color_mix_.data);
  fn("time_proj0", time_proj0_.data);
  fn("time_proj1", time_proj1_.data);
  auto conv = [&](const std::string& name, ConvWeights& w) {
    fn(name + ".weight", w.weights);
    if (!w.bias.empty()) fn(name + ".bias", w.bias);
  };
  auto block = [&](const std::string& name, ConvAttnBlock& b) {
    conv(name + ".conv", b.conv);
    fn(name + ".self_attn.query", b.self_attn.query.data);
    fn(name + ".self_attn.key", b.self_attn.key.data);
    fn(name + ".self_attn.value", b.self_attn.value.data);
    fn(name + ".cross_attn.query", b.cross_attn.query.data);
    fn(name + ".cross_attn.key", b.cross_attn.key.data);
    fn(name + ".cross_attn.value", b.cross_attn.value.data);
    fn(name + ".ffn_in", b.ffn_in.data);
    fn(name + ".ffn_out", b.ffn_out.data);
  };
  conv("conv_in", conv_in_);
  block("down0", down0_);
  conv("down_conv", down_conv_);
  block("down1", down1_);
  conv("up_conv", up_conv_);
  block("up0", up0_);
  conv("conv_out", conv_out_);
  fn("bos_token", bos_token_);
  fn("pad_token", pad_token_);
  depth_encoder_.visit_params(fn);
}

void ToyBackend::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "eve-toy-weights";
  j["version"] = 1;
  j["spec"] = {{"seed", spec_.seed},
               {"latent_channels", spec_.latent_channels},
               {"downscale", spec_.downscale},
               {"channels", spec_.channels},
               {"text_dim", spec_.text_dim},
               {"max_tokens", spec_.max_tokens},
               {"train_steps", spec_.train_steps},
               {"output_gain", spec_.output_gain},
               {"prior_std", spec_.prior_std},
               {"prior_beta_start", spec_.prior_betas.start},
               {"prior_beta_end", spec_.prior_betas.end},
               {"prior_beta_scaled", spec_.prior_betas.kind == BetaKind::scaled_linear},
               {"depth_seed", spec_.depth.seed},
               {"depth_output_gain", spec_.depth.output_gain}};
  auto& params = j["params"];
  const_cast<ToyBackend*>(this)->for_each_param(
      [&](const std::string& name, std::vector<double>& v) { params[name] = v; });
  std::ofstream os(path);
  if (!os) throw io_error("cannot write weight file " + path.string(), "weights");
  os << j.dump() << '\n';
  if (!os) throw io_error("failed writing weight file " + path.string(), "weights");
}

ToyBackend ToyBackend::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw backend_error("cannot open weight file " + path.string(), "weights");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw backend_error("weight file " + path.string() + " is not valid JSON: " + e.what(), "weights");
  }
  if (j.value("format", "") != "eve-toy-weights" || j.value("version", 0) != 1) {
    throw backend_error("unsupported weight file format in " + path.string(), "weights");
  }
  try {
    const auto& s = j.at("spec");
    ToyBackendSpec spec;
    spec.seed = s.at("seed").get<std::uint64_t>();
    spec.latent_channels = s.at("latent_channels").get<int>();
    spec.downscale = s.at("downscale").get<int>();
    spec.channels = s.at("channels").get<std::vector<int>>();
    spec.text_dim = s.at("text_dim").get<int>();
    spec.max_tokens = s.at("max_tokens").get<int>();
    spec.train_steps = s.at("train_steps").get<int>();
    spec.output_gain = s.at("output_gain").get<double>();
    spec.prior_std = s.at("prior_std").get<double>();
    const double b0 = s.at("prior_beta_start").get<double>();
    const double b1 = s.at("prior_beta_end").get<double>();
    spec.prior_betas = s.at("prior_beta_scaled").get<bool>() ? BetaSpec::scaled_linear(b0, b1) : BetaSpec::linear(b0, b1);
    spec.depth.seed = s.at("depth_seed").get<std::uint64_t>();
    spec.depth.output_gain = s.at("depth_output_gain").get<double>();
    ToyBackend b(spec);
    const auto& params = j.at("params");
    b.for_each_param([&](const std::string& name, std::vector<double>& v) {
      auto loaded = params.at(name).get<std::vector<double>>();
      if (loaded.size() != v.size()) throw backend_error("parameter " + name + " has wrong size", "weights");
      v = std::move(loaded);
    });
    b.finish_init();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw backend_error("weight file " + path.string() + " is incomplete: " + e.what(), "weights");
  }
}

BackendInfo ToyBackend::info() const {
  return {"toy", spec_.latent_channels, spec_.downscale, 1.0, 2};
}

Tensor3 ToyBackend::encode_image(const Image& image) const {
  const int f = spec_.downscale;
  if (image.channels != 3) throw std::invalid_argument("encode_image expects 3 channels");
  if (image.height % f != 0 || image.width % f != 0) {
    throw config_error("image size not divisible by latent downscale " + std::to_string(f), "encode");
  }
  const int h = image.height / f;
  const int w = image.width / f;
  Tensor3 z(spec_.latent_channels, h, w);
  const double inv = 1.0 / (f * f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double u[3] = {};
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < f; ++dy) {
          for (int dx = 0; dx < f; ++dx) s += image.at(c, y * f + dy, x * f + dx);
        }
        u[c] = 2.0 * s * inv - 1.0;
      }
      for (int lc = 0; lc < spec_.latent_channels; ++lc) {
        z.at(lc, y, x) = color_mix_(lc, 0) * u[0] + color_mix_(lc, 1) * u[1] + color_mix_(lc, 2) * u[2];
      }
    }
  }
  return z;
}

Image ToyBackend::decode_latent(const Tensor3& latent) const {
  if (latent.channels != spec_.latent_channels) throw std::invalid_argument("decode_latent: channel mismatch");
  const int f = spec_.downscale;
  Image img(3, latent.height * f, latent.width * f);
  for (int y = 0; y < latent.height; ++y) {
    for (int x = 0; x < latent.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double u = 0.0;
        for (int lc = 0; lc < spec_.latent_channels; ++lc) u += color_unmix_(c, lc) * latent.at(lc, y, x);
        const double v = std::clamp((u + 1.0) * 0.5, 0.0, 1.0);
        for (int dy = 0; dy < f; ++dy) {
          for (int dx = 0; dx < f; ++dx) img.at(c, y * f + dy, x * f + dx) = v;
        }
      }
    }
  }
  return img;
}

PromptEmbedding ToyBackend::encode_text(std::string_view prompt) const {
  const int dim = spec_.text_dim;
  PromptEmbedding p{Matrix(spec_.max_tokens, dim)};
  std::copy(bos_token_.begin(), bos_token_.end(), p.tokens.row(0).begin());
  const auto words = words_of(prompt);
  int row = 1;
  for (const auto& word : words) {
    if (row >= spec_.max_tokens) break;
    detail::Rng rng(spec_.seed ^ detail::fnv1a(word));
    std::vector<double> v(dim);
    detail::fill_normal(v, rng, 1.0);
    const auto pos = sinusoid(row, dim);
    auto r = p.tokens.row(row);
    for (int i = 0; i < dim; ++i) r[i] = v[i] + 0.1 * pos[i];
    ++row;
  }
  for (; row < spec_.max_tokens; ++row) std::copy(pad_token_.begin(), pad_token_.end(), p.tokens.row(row).begin());
  return p;
}

DepthFeatures ToyBackend::encode_depth(std::span<const Tensor3> depth_maps) const {
  return depth_encoder_.encode(depth_maps);
}

std::vector<StageShape> ToyBackend::stage_shapes(int latent_height, int latent_width) const {
  if (latent_height % 2 != 0 || latent_width % 2 != 0) {
    throw config_error("latent size must be even for the two-level UNet", "unet");
  }
  return {{spec_.channels[0], latent_height, latent_width},
          {spec_.channels[1], latent_height / 2, latent_width / 2}};
}

std::vector<double> ToyBackend::time_embedding(int timestep, int width) const {
  return sinusoid(static_cast<double>(timestep), width);
}

void ToyBackend::run_block(const ConvAttnBlock& block, std::vector<Tensor3>& hidden, const PromptEmbedding& prompt,
                           AttentionMode mode) const {
  const int frames = static_cast<int>(hidden.size());
  const int h = hidden[0].height;
  const int w = hidden[0].width;
  std::vector<Matrix> tokens(frames);
  std::vector<Matrix> normed(frames);

#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    Tensor3 act = hidden[k];
    for (double& v : act.data) v = silu(v);
    add_inplace(hidden[k], kernels::conv2d(act, block.conv, 1));
    tokens[k] = to_tokens(hidden[k]);
    normed[k] = layer_norm(tokens[k]);
  }

  // Self-attention reads every frame's pre-attention tokens, so all frames
  // are normalised before any of them is updated.
#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    add_inplace(tokens[k], self_attention_frame(mode, k, normed, block.self_attn));
    add_inplace(tokens[k], cross_attention(layer_norm(tokens[k]), prompt, block.cross_attn));
    Matrix mid = kernels::project(layer_norm(tokens[k]), block.ffn_in);
    for (double& v : mid.data) v = gelu(v);
    add_inplace(tokens[k], kernels::project(mid, block.ffn_out));
    hidden[k] = from_tokens(tokens[k], h, w);
  }
}

std::vector<Tensor3> ToyBackend::predict_noise(const NoiseRequest& req) const {
  const auto& z = req.latents;
  if (z.empty()) throw std::invalid_argument("predict_noise: no frames");
  for (const auto& f : z) {
    if (f.channels != spec_.latent_channels || !f.same_shape(z[0])) {
      throw std::invalid_argument("predict_noise: inconsistent latent shapes");
    }
    if (!all_finite(f.data)) throw numeric_error("predict_noise: non-finite latent", "unet");
  }
  if (req.timestep < 1 || req.timestep > spec_.train_steps) {
    throw std::out_of_range("predict_noise: timestep " + std::to_string(req.timestep) + " out of range");
  }
  const auto shapes = stage_shapes(z[0].height, z[0].width);
  if (req.depth != nullptr) validate_depth_features(*req.depth, static_cast<int>(z.size()), shapes);
  const PromptEmbedding& prompt = req.prompt != nullptr ? *req.prompt : null_prompt_;
  if (prompt.empty() || prompt.tokens.cols != spec_.text_dim) {
    throw std::invalid_argument("predict_noise: prompt embedding width mismatch");
  }

  const int frames = static_cast<int>(z.size());
  const int c0 = spec_.channels[0];
  const auto emb = time_embedding(req.timestep, c0);
  const auto temb0 = matvec(time_proj0_, emb);
  const auto temb1 = matvec(time_proj1_, emb);

  std::vector<Tensor3> hidden(frames);
#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    hidden[k] = kernels::conv2d(z[k], conv_in_, 1);
    add_channel_bias(hidden[k], temb0);
  }
  run_block(down0_, hidden, prompt, req.attention);
  if (req.depth != nullptr) {
    for (int k = 0; k < frames; ++k) add_inplace(hidden[k], req.depth->frames[k][0]);
  }
  std::vector<Tensor3> skip = hidden;

#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    hidden[k] = kernels::conv2d(hidden[k], down_conv_, 2);
    add_channel_bias(hidden[k], temb1);
  }
  run_block(down1_, hidden, prompt, req.attention);
  if (req.depth != nullptr) {
    for (int k = 0; k < frames; ++k) add_inplace(hidden[k], req.depth->frames[k][1]);
  }

#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    hidden[k] = kernels::conv2d(upsample_nearest(hidden[k], 2), up_conv_, 1);
    add_inplace(hidden[k], skip[k]);
  }
  run_block(up0_, hidden, prompt, req.attention);

  // E[eps | z] under the Gaussian prior: sqrt(1-a) z / (a s^2 + 1 - a).
  const double a = prior_alpha_bars_[req.timestep - 1];
  const double s2 = spec_.prior_std * spec_.prior_std;
  const double prior_gain = std::sqrt(1.0 - a) / (a * s2 + 1.0 - a);

  std::vector<Tensor3> eps(frames);
#pragma omp parallel for schedule(static) if (frames > 1)
  for (int k = 0; k < frames; ++k) {
    eps[k] = kernels::conv2d(hidden[k], conv_out_, 1);
    for (std::size_t i = 0; i < eps[k].size(); ++i) eps[k].data[i] += prior_gain * z[k].data[i];
  }
  return eps;
}

}  // namespace eve
