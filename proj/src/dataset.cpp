#include "eve/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "eve/error.hpp"
#include "eve/frames_io.hpp"
#include "http_util.hpp"

namespace eve {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Category c) {
  switch (c) {
    case Category::OR: return "OR";
    case Category::OA: return "OA";
    case Category::ST: return "ST";
    case Category::BC: return "BC";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  for (Category c : kCategories) {
    if (to_string(c) == s) return c;
  }
  throw config_error("unknown edit category '" + std::string(s) + "'", "dataset");
}

std::string_view to_string(VideoSource s) {
  switch (s) {
    case VideoSource::davis: return "davis";
    case VideoSource::footage: return "footage";
    case VideoSource::local: return "local";
  }
  return "?";
}

VideoSource parse_video_source(std::string_view s) {
  for (VideoSource v : {VideoSource::davis, VideoSource::footage, VideoSource::local}) {
    if (to_string(v) == s) return v;
  }
  throw config_error("unknown video source '" + std::string(s) + "'", "dataset");
}

bool DatasetRecord::complete() const {
  return std::all_of(kCategories.begin(), kCategories.end(), [&](Category c) {
    const auto it = prompts.find(c);
    return it != prompts.end() && !it->second.empty();
  });
}

std::vector<std::string> StubCaptioner::captions(const Image& frame, int count) const {
  double mean[3] = {0.0, 0.0, 0.0};
  const int channels = std::min(frame.channels, 3);
  for (int c = 0; c < channels; ++c) {
    for (double v : frame.channel(c)) mean[c] += v;
    mean[c] /= std::max<std::size_t>(frame.plane(), 1);
  }
  if (channels == 1) mean[1] = mean[2] = mean[0];
  const char* colours[] = {"red", "green", "blue"};
  const int dominant = static_cast<int>(std::max_element(mean, mean + 3) - mean);
  const std::string colour = colours[dominant];
  const std::string light = (mean[0] + mean[1] + mean[2]) / 3.0 > 0.5 ? "bright" : "dark";
  const std::vector<std::string> pool = {
      "a " + colour + " scene",
      "a " + light + " " + colour + " scene",
      "a " + light + " scene with " + colour + " tones",
      "a " + light + " " + colour + " scene with a moving object",
      "a " + light + " " + colour + " scene with a moving object in the centre",
      "a video of a " + colour + " scene",
  };
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(pool[static_cast<std::size_t>(i) % pool.size()]);
  return out;
}

HttpCaptioner::HttpCaptioner(std::string base_url, std::string token, int timeout_seconds)
    : base_url_(std::move(base_url)), token_(std::move(token)), timeout_seconds_(timeout_seconds) {}

std::vector<std::string> HttpCaptioner::captions(const Image& frame, int count) const {
  const auto target = detail::split_url(base_url_);
  auto cli = detail::make_client(target, token_, timeout_seconds_);
  const auto png = encode_png(frame);
  const auto res = cli->Post(target.prefix + "/caption?n=" + std::to_string(count),
                             reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  const auto& ok = detail::require_ok(res, "captioner");
  try {
    return json::parse(ok.body).at("captions").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw backend_error(std::string("captioner response is malformed: ") + e.what(), "caption");
  }
}

std::string StubPromptWriter::write(Category category, std::string_view, std::string_view caption) const {
  return std::string(to_string(category)) + ":" + std::string(caption);
}

HttpPromptWriter::HttpPromptWriter(std::string base_url, std::string token, int timeout_seconds)
    : base_url_(std::move(base_url)), token_(std::move(token)), timeout_seconds_(timeout_seconds) {}

std::string HttpPromptWriter::write(Category category, std::string_view instruction, std::string_view caption) const {
  const auto target = detail::split_url(base_url_);
  auto cli = detail::make_client(target, token_, timeout_seconds_);
  const json body = {{"category", std::string(to_string(category))},
                     {"template", std::string(instruction)},
                     {"caption", std::string(caption)}};
  const auto res = cli->Post(target.prefix + "/prompt", body.dump(), "application/json");
  const auto& ok = detail::require_ok(res, "prompt writer");
  try {
    return json::parse(ok.body).at("prompt").get<std::string>();
  } catch (const json::exception& e) {
    throw backend_error(std::string("prompt writer response is malformed: ") + e.what(), "prompts");
  }
}

PromptTemplates default_templates() {
  return {
      {Category::OR,
       "Below is a video caption: \"{caption}\". Swap its main object for a different object of similar shape "
       "and reply with the rewritten caption only."},
      {Category::OA,
       "Below is a video caption: \"{caption}\". Keep the main object but change one of its visual attributes, "
       "such as its colour or material, and reply with the rewritten caption only."},
      {Category::ST,
       "Below is a video caption: \"{caption}\". Describe the same scene rendered in a distinct artistic style "
       "and reply with the rewritten caption only."},
      {Category::BC,
       "Below is a video caption: \"{caption}\". Keep the foreground subject, move it to a different "
       "background and reply with the rewritten caption only."},
  };
}

PromptTemplates load_templates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open template file " + path.string(), "dataset");
  PromptTemplates out;
  try {
    const json j = json::parse(in);
    for (const auto& [key, value] : j.items()) out[parse_category(key)] = value.get<std::string>();
  } catch (const json::exception& e) {
    throw config_error("template file " + path.string() + " is malformed: " + e.what(), "dataset");
  }
  for (Category c : kCategories) {
    if (!out.count(c)) throw config_error("template file lacks category " + std::string(to_string(c)), "dataset");
  }
  return out;
}

std::string render_template(std::string_view tmpl, std::string_view caption) {
  static constexpr std::string_view kSlot = "{caption}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = tmpl.find(kSlot, pos);
    out.append(tmpl.substr(pos, hit - pos));
    if (hit == std::string_view::npos) break;
    out.append(caption);
    pos = hit + kSlot.size();
  }
  return out;
}

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string select_caption(const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw backend_error("captioner returned no candidates", "caption");
  const std::string* best = &candidates.front();
  for (const auto& c : candidates) {
    const auto lc = utf8_length(c);
    const auto lb = utf8_length(*best);
    if (lc > lb || (lc == lb && c < *best)) best = &c;
  }
  return *best;
}

std::string generate_caption(const Image& first_frame, const Captioner& captioner, int candidates) {
  if (candidates < 1) throw config_error("caption candidate count must be at least 1", "caption");
  const std::string caption = select_caption(captioner.captions(first_frame, candidates));
  if (caption.empty()) throw backend_error("captioner returned only empty captions", "caption");
  return caption;
}

std::map<Category, std::string> generate_prompts(const std::string& caption, const PromptWriter& writer,
                                                 const PromptTemplates& templates) {
  if (caption.empty()) throw config_error("cannot write prompts for an empty caption", "prompts");
  std::map<Category, std::string> out;
  for (Category c : kCategories) {
    const auto t = templates.find(c);
    if (t == templates.end()) throw config_error("no template for category " + std::string(to_string(c)), "prompts");
    std::string prompt = writer.write(c, render_template(t->second, caption), caption);
    if (prompt.empty()) {
      throw backend_error("empty response for category " + std::string(to_string(c)), "prompts");
    }
    out.emplace(c, std::move(prompt));
  }
  return out;
}

namespace {

json record_to_json(const DatasetRecord& r) {
  json prompts = json::object();
  for (const auto& [c, p] : r.prompts) prompts[std::string(to_string(c))] = p;
  return {{"video_id", r.video_id},   {"source", std::string(to_string(r.source))},
          {"video", r.video},         {"caption", r.caption},
          {"prompts", prompts},       {"verified", r.verified},
          {"note", r.note}};
}

DatasetRecord record_from_json(const json& j) {
  DatasetRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.source = parse_video_source(j.at("source").get<std::string>());
  r.video = j.value("video", "");
  r.caption = j.at("caption").get<std::string>();
  for (const auto& [key, value] : j.at("prompts").items()) r.prompts[parse_category(key)] = value.get<std::string>();
  r.verified = j.at("verified").get<bool>();
  r.note = j.value("note", "");
  if (r.video_id.empty()) throw config_error("record has an empty video_id", "manifest");
  if (r.verified && !r.complete()) throw config_error("verified record lacks a category prompt", "manifest");
  return r;
}

}  // namespace

void write_manifest(const std::vector<DatasetRecord>& records, const fs::path& path) {
  for (const auto& r : records) {
    if (r.video_id.empty()) throw config_error("refusing to write a record without video_id", "manifest");
    if (r.verified && !r.complete()) {
      throw config_error("refusing to write verified record '" + r.video_id + "' without all four prompts",
                         "manifest");
    }
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp.string(), "manifest");
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
    if (!out) throw io_error("write to " + tmp.string() + " failed", "manifest");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("cannot move manifest into place: " + ec.message(), "manifest");
}

std::vector<DatasetRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open manifest " + path.string(), "manifest");
  std::vector<DatasetRecord> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw io_error(path.string() + ":" + std::to_string(number) + ": malformed record: " + e.what(), "manifest");
    } catch (const Error& e) {
      throw io_error(path.string() + ":" + std::to_string(number) + ": " + e.what(), "manifest");
    }
  }
  return out;
}

std::vector<VideoEntry> discover_videos(const fs::path& root, VideoSource source) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw io_error(root.string() + " is not a directory", "dataset");
  std::vector<VideoEntry> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.path().filename().string().starts_with(".")) continue;
    if (e.is_directory() || e.is_regular_file()) out.push_back({e.path().stem().string(), source, e.path()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

BuildResult build_dataset(const std::vector<VideoEntry>& videos, const Captioner& captioner,
                          const PromptWriter& writer, const BuildOptions& options) {
  if (options.max_in_flight < 1) throw config_error("max in-flight requests must be at least 1", "dataset");
  if (options.caption_candidates < 1) throw config_error("caption candidate count must be at least 1", "dataset");
  const std::size_t n = videos.size();
  std::vector<DatasetRecord> records(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& v = videos[i];
      try {
        DatasetRecord r;
        r.video_id = v.video_id;
        r.source = v.source;
        r.video = v.path.string();
        r.caption = generate_caption(read_first_frame(v.path), captioner, options.caption_candidates);
        r.prompts = generate_prompts(r.caption, writer, options.templates);
        records[i] = std::move(r);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(options.max_in_flight), n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  BuildResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i].empty()) {
      result.records.push_back(std::move(records[i]));
    } else {
      result.failures.push_back({videos[i].video_id, errors[i]});
    }
  }
  return result;
}

DatasetRecord& review_record(std::vector<DatasetRecord>& records, const std::string& video_id,
                             ReviewDecision decision, const std::string& note) {
  const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.video_id == video_id; });
  if (it == records.end()) throw config_error("no record with video_id '" + video_id + "'", "review");
  if (decision == ReviewDecision::approve && !it->complete()) {
    throw config_error("record '" + video_id + "' cannot be approved without all four prompts", "review");
  }
  if (decision == ReviewDecision::approve) it->verified = true;
  if (decision == ReviewDecision::reject) it->verified = false;
  if (decision != ReviewDecision::none || !note.empty()) it->note = note;
  return *it;
}

std::string first_frame_path(const DatasetRecord& record) {
  std::error_code ec;
  if (fs::is_directory(record.video, ec)) {
    const auto files = list_frame_files(record.video);
    if (!files.empty()) return files.front().string();
  }
  return record.video;
}

}  // namespace eve
