#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eve/tensor.hpp"

namespace eve {

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  // Frames are centre-cropped and resized to this side length before embedding.
  virtual int input_resolution() const = 0;
  virtual std::vector<double> embed_image(const Image& image) const = 0;
  virtual std::string name() const = 0;
};

// Image and text encoders sharing one embedding space.
class JointEmbedder : public ImageEmbedder {
 public:
  virtual std::vector<double> embed_text(std::string_view text) const = 0;
};

// Fixed random sign projection of mean-centred 16x16 pixels into 64 dimensions.
// Text maps to the sum of per-word hashed sign vectors. Both are L2-normalised.
class ToyEmbedder final : public JointEmbedder {
 public:
  static constexpr int kResolution = 16;
  static constexpr int kDim = 64;

  explicit ToyEmbedder(std::uint64_t seed = 0x0c11'9e3d) : seed_(seed) {}

  int input_resolution() const override { return kResolution; }
  std::vector<double> embed_image(const Image& image) const override;
  std::vector<double> embed_text(std::string_view text) const override;
  std::string name() const override { return "toy"; }

  // Projection entry (+1 or -1) for output j and flattened (c, y, x) pixel i.
  double projection(int j, int i) const;

 private:
  std::uint64_t seed_;
};

// Adapter for an embedding service:
//   POST <base>/embed/image (PNG body)        -> {"embedding": [...]}
//   POST <base>/embed/text  ({"text": "..."}) -> {"embedding": [...]}
class HttpEmbedder final : public JointEmbedder {
 public:
  HttpEmbedder(std::string base_url, std::string token = {}, int resolution = 224, int timeout_seconds = 60);

  int input_resolution() const override { return resolution_; }
  std::vector<double> embed_image(const Image& image) const override;
  std::vector<double> embed_text(std::string_view text) const override;
  std::string name() const override { return "http"; }

 private:
  std::string base_url_;
  std::string token_;
  int resolution_;
  int timeout_seconds_;
};

// Throws a numeric error if either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct PairSimilarity {
  int first;
  int second;
  double similarity;  // raw cosine in [-1, 1]
};

struct TemporalConsistency {
  double score = 0.0;  // mean pair cosine x 100
  std::vector<PairSimilarity> pairs;
};

struct PromptConsistency {
  double score = 0.0;               // mean per-frame score
  std::vector<double> frame_scores; // 100 x cosine(image, text)
};

std::vector<std::vector<double>> embed_frames(std::span<const Image> frames, const ImageEmbedder& embedder);

TemporalConsistency temporal_consistency(std::span<const Image> frames, const ImageEmbedder& embedder);
PromptConsistency prompt_consistency(std::span<const Image> frames, std::string_view prompt,
                                     const JointEmbedder& embedder);

struct MetricsReport {
  std::string embedder;
  int embed_resolution = 0;
  int frame_count = 0;
  std::optional<TemporalConsistency> temporal;  // absent when not requested
  std::optional<PromptConsistency> prompt;  // absent when not requested
  std::string prompt_text;
};

inline constexpr int kMetricsSchemaVersion = 1;

// TC when `temporal` is set, PC when `prompt` is non-empty.
MetricsReport evaluate(std::span<const Image> frames, const JointEmbedder& embedder, bool temporal,
                       const std::string& prompt);

nlohmann::json report_to_json(const MetricsReport& report);
std::string pairs_csv(const MetricsReport& report);

}  // namespace eve
