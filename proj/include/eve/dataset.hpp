#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "eve/tensor.hpp"

namespace eve {

// Edit categories: object replacement, object attribute, style transfer,
// background change.
enum class Category { OR, OA, ST, BC };
inline constexpr std::array<Category, 4> kCategories{Category::OR, Category::OA, Category::ST, Category::BC};

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

enum class VideoSource { davis, footage, local };
std::string_view to_string(VideoSource s);
VideoSource parse_video_source(std::string_view s);

struct DatasetRecord {
  std::string video_id;
  VideoSource source = VideoSource::local;
  std::string video;  // path of the frame directory or video file
  std::string caption;
  std::map<Category, std::string> prompts;
  bool verified = false;
  std::string note;   // operator remark from review

  bool complete() const;  // all four categories present and non-empty
  bool operator==(const DatasetRecord&) const = default;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::vector<std::string> captions(const Image& frame, int count) const = 0;
};

// Deterministic candidates derived from the frame's colour and brightness.
class StubCaptioner final : public Captioner {
 public:
  std::vector<std::string> captions(const Image& frame, int count) const override;
};

// POST <base>/caption?n=<count> with a PNG body -> {"captions": [...]}.
class HttpCaptioner final : public Captioner {
 public:
  HttpCaptioner(std::string base_url, std::string token = {}, int timeout_seconds = 60);
  std::vector<std::string> captions(const Image& frame, int count) const override;

 private:
  std::string base_url_;
  std::string token_;
  int timeout_seconds_;
};

class PromptWriter {
 public:
  virtual ~PromptWriter() = default;
  virtual std::string write(Category category, std::string_view instruction, std::string_view caption) const = 0;
};

// Echoes "<CAT>:<caption>".
class StubPromptWriter final : public PromptWriter {
 public:
  std::string write(Category category, std::string_view instruction, std::string_view caption) const override;
};

// POST <base>/prompt with {"category", "template", "caption"} -> {"prompt": "..."}.
class HttpPromptWriter final : public PromptWriter {
 public:
  HttpPromptWriter(std::string base_url, std::string token = {}, int timeout_seconds = 120);
  std::string write(Category category, std::string_view instruction, std::string_view caption) const override;

 private:
  std::string base_url_;
  std::string token_;
  int timeout_seconds_;
};

// Instruction templates; "{caption}" is substituted by the caption.
using PromptTemplates = std::map<Category, std::string>;
PromptTemplates default_templates();
PromptTemplates load_templates(const std::filesystem::path& path);  // JSON object keyed by category
std::string render_template(std::string_view tmpl, std::string_view caption);

// Number of UTF-8 code points.
std::size_t utf8_length(std::string_view s);

// Longest candidate by code points; ties go to the lexicographically smaller.
std::string select_caption(const std::vector<std::string>& candidates);

std::string generate_caption(const Image& first_frame, const Captioner& captioner, int candidates = 5);
std::map<Category, std::string> generate_prompts(const std::string& caption, const PromptWriter& writer,
                                                 const PromptTemplates& templates = default_templates());

void write_manifest(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);
std::vector<DatasetRecord> read_manifest(const std::filesystem::path& path);

struct VideoEntry {
  std::string video_id;
  VideoSource source = VideoSource::local;
  std::filesystem::path path;
};

// Every frame directory, image or video file directly under `root`, sorted by name.
std::vector<VideoEntry> discover_videos(const std::filesystem::path& root, VideoSource source);

struct BuildOptions {
  int caption_candidates = 5;
  int max_in_flight = 4;
  PromptTemplates templates = default_templates();
};

struct BuildFailure {
  std::string video_id;
  std::string message;
};

struct BuildResult {
  std::vector<DatasetRecord> records;  // in input order, failed entries omitted
  std::vector<BuildFailure> failures;
};

BuildResult build_dataset(const std::vector<VideoEntry>& videos, const Captioner& captioner,
                          const PromptWriter& writer, const BuildOptions& options = {});

enum class ReviewDecision { none, approve, reject };

// Records an operator decision on one record. Approval requires a complete record.
DatasetRecord& review_record(std::vector<DatasetRecord>& records, const std::string& video_id,
                             ReviewDecision decision, const std::string& note);

// Path of the first frame a reviewer should look at.
std::string first_frame_path(const DatasetRecord& record);

}  // namespace eve
