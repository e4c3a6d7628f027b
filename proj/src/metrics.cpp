#include "eve/metrics.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>

#include "eve/error.hpp"
#include "eve/frames_io.hpp"
#include "http_util.hpp"
#include "init.hpp"

namespace eve {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  std::uint64_t z = x + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double sign_bit(std::uint64_t x) { return (splitmix64(x) & 1ULL) ? 1.0 : -1.0; }

std::vector<double> normalized(std::vector<double> v, const char* what) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw numeric_error(std::string(what) + " has zero norm", "embed");
  for (double& x : v) x /= n;
  return v;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<double> parse_embedding(const std::string& body) {
  try {
    auto v = nlohmann::json::parse(body).at("embedding").get<std::vector<double>>();
    if (v.empty()) throw backend_error("embedding service returned an empty vector", "embed");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw backend_error(std::string("embedding response is malformed: ") + e.what(), "embed");
  }
}

}  // namespace

double ToyEmbedder::projection(int j, int i) const {
  const std::uint64_t inputs = 3ULL * kResolution * kResolution;
  return sign_bit(seed_ + static_cast<std::uint64_t>(j) * inputs + static_cast<std::uint64_t>(i));
}

std::vector<double> ToyEmbedder::embed_image(const Image& image) const {
  if (image.channels != 3) throw numeric_error("toy embedder expects RGB frames", "embed");
  const Image small = preprocess_frame(image, kResolution);
  const int n = static_cast<int>(small.size());
  std::vector<double> out(kDim, 0.0);
  for (int j = 0; j < kDim; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += projection(j, i) * (small.data[i] - 0.5);
    out[j] = acc;
  }
  return normalized(std::move(out), "image embedding");
}

std::vector<double> ToyEmbedder::embed_text(std::string_view text) const {
  const auto tokens = words(text);
  if (tokens.empty()) throw config_error("prompt has no words", "embed");
  std::vector<double> out(kDim, 0.0);
  for (const auto& w : tokens) {
    const std::uint64_t h = detail::fnv1a(w) ^ seed_;
    for (int j = 0; j < kDim; ++j) out[j] += sign_bit(h + static_cast<std::uint64_t>(j));
  }
  return normalized(std::move(out), "text embedding");
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::string token, int resolution, int timeout_seconds)
    : base_url_(std::move(base_url)), token_(std::move(token)), resolution_(resolution),
      timeout_seconds_(timeout_seconds) {
  if (resolution_ <= 0) throw config_error("embedder resolution must be positive");
}

std::vector<double> HttpEmbedder::embed_image(const Image& image) const {
  const auto target = detail::split_url(base_url_);
  auto cli = detail::make_client(target, token_, timeout_seconds_);
  const auto png = encode_png(preprocess_frame(image, resolution_));
  const auto res = cli->Post(target.prefix + "/embed/image", reinterpret_cast<const char*>(png.data()), png.size(),
                             "image/png");
  return parse_embedding(detail::require_ok(res, "image embedder").body);
}

std::vector<double> HttpEmbedder::embed_text(std::string_view text) const {
  const auto target = detail::split_url(base_url_);
  auto cli = detail::make_client(target, token_, timeout_seconds_);
  const nlohmann::json body = {{"text", std::string(text)}};
  const auto res = cli->Post(target.prefix + "/embed/text", body.dump(), "application/json");
  return parse_embedding(detail::require_ok(res, "text embedder").body);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw numeric_error("embedding sizes differ", "metrics");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw numeric_error("cosine of a zero vector", "metrics");
  return dot(a, b) / (na * nb);
}

std::vector<std::vector<double>> embed_frames(std::span<const Image> frames, const ImageEmbedder& embedder) {
  const int k = static_cast<int>(frames.size());
  std::vector<std::vector<double>> out(k);
  std::vector<std::exception_ptr> errors(k);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < k; ++i) {
    try {
      out[i] = embedder.embed_image(frames[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

TemporalConsistency temporal_consistency(std::span<const Image> frames, const ImageEmbedder& embedder) {
  if (frames.size() < 2) throw config_error("temporal consistency needs at least 2 frames", "metrics");
  const auto emb = embed_frames(frames, embedder);
  TemporalConsistency tc;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < emb.size(); ++i) {
    const double s = cosine_similarity(emb[i], emb[i + 1]);
    tc.pairs.push_back({static_cast<int>(i), static_cast<int>(i + 1), s});
    sum += s;
  }
  tc.score = 100.0 * sum / static_cast<double>(tc.pairs.size());
  return tc;
}

PromptConsistency prompt_consistency(std::span<const Image> frames, std::string_view prompt,
                                     const JointEmbedder& embedder) {
  if (frames.empty()) throw config_error("prompt consistency needs at least 1 frame", "metrics");
  if (prompt.empty()) throw config_error("prompt consistency needs a non-empty prompt", "metrics");
  const auto text = embedder.embed_text(prompt);
  const auto emb = embed_frames(frames, embedder);
  PromptConsistency pc;
  double sum = 0.0;
  for (const auto& e : emb) {
    pc.frame_scores.push_back(100.0 * cosine_similarity(e, text));
    sum += pc.frame_scores.back();
  }
  pc.score = sum / static_cast<double>(pc.frame_scores.size());
  return pc;
}

MetricsReport evaluate(std::span<const Image> frames, const JointEmbedder& embedder, bool temporal,
                       const std::string& prompt) {
  MetricsReport r;
  r.embedder = embedder.name();
  r.embed_resolution = embedder.input_resolution();
  r.frame_count = static_cast<int>(frames.size());
  if (temporal) r.temporal = temporal_consistency(frames, embedder);
  if (!prompt.empty()) {
    r.prompt = prompt_consistency(frames, prompt, embedder);
    r.prompt_text = prompt;
  }
  return r;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j = {
      {"schema_version", kMetricsSchemaVersion},
      {"embedder", report.embedder},
      {"embed_resolution", report.embed_resolution},
      {"frames", report.frame_count},
  };
  if (report.temporal) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : report.temporal->pairs) {
      pairs.push_back({{"first", p.first}, {"second", p.second}, {"similarity", p.similarity}});
    }
    j["temporal_consistency"] = report.temporal->score;
    j["pairs"] = pairs;
  } else {
    j["temporal_consistency"] = nullptr;
  }
  if (report.prompt) {
    j["prompt"] = report.prompt_text;
    j["prompt_consistency"] = report.prompt->score;
    j["frame_scores"] = report.prompt->frame_scores;
  } else {
    j["prompt_consistency"] = nullptr;
  }
  return j;
}

std::string pairs_csv(const MetricsReport& report) {
  std::string out = "first,second,similarity\n";
  char line[96];
  if (!report.temporal) return out;
  for (const auto& p : report.temporal->pairs) {
    std::snprintf(line, sizeof line, "%d,%d,%.17g\n", p.first, p.second, p.similarity);
    out += line;
  }
  return out;
}

}  // namespace eve
