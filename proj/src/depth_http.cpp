#include <json.hpp>

#include "eve/depth.hpp"
#include "eve/frames_io.hpp"
#include "http_util.hpp"

namespace eve {

HttpDepthEstimator::HttpDepthEstimator(std::string base_url, std::string token, int timeout_seconds)
    : base_url_(std::move(base_url)), token_(std::move(token)), timeout_seconds_(timeout_seconds) {}

Tensor3 HttpDepthEstimator::estimate(const Image& frame) const {
  const auto target = detail::split_url(base_url_);
  auto cli = detail::make_client(target, token_, timeout_seconds_);
  const auto png = encode_png(frame);
  const auto res = cli->Post(target.prefix + "/depth", reinterpret_cast<const char*>(png.data()), png.size(),
                             "image/png");
  const auto& ok = detail::require_ok(res, "depth estimator");
  try {
    const auto j = nlohmann::json::parse(ok.body);
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    const auto values = j.at("depth").get<std::vector<double>>();
    if (w != frame.width || h != frame.height || values.size() != static_cast<std::size_t>(w) * h) {
      throw backend_error("depth estimator returned a map of the wrong size", "depth");
    }
    Tensor3 raw(1, h, w);
    raw.data = values;
    return normalize_depth(raw);
  } catch (const nlohmann::json::exception& e) {
    throw backend_error(std::string("depth estimator response is malformed: ") + e.what(), "depth");
  }
}

}  // namespace eve
