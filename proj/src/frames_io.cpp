#include "eve/frames_io.hpp"

#include <algorithm>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "eve/error.hpp"

namespace eve {
namespace fs = std::filesystem;
namespace {

Image from_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  cv::Mat f;
  const double scale = rgb.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  rgb.convertTo(f, CV_64FC3, scale);
  Image img(3, f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3d>(y);
    for (int x = 0; x < f.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][c];
    }
  }
  return img;
}

cv::Mat to_mat_bgr8(const Image& img) {
  if (img.channels != 3 && img.channels != 1) throw std::invalid_argument("image must have 1 or 3 channels");
  cv::Mat out(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(img.channels == 1 ? 0 : c, y, x);
        row[x][2 - c] = cv::saturate_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
      }
    }
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

Image read_image(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw io_error("cannot decode image " + path.string(), "decode");
  return from_mat(m);
}

void write_png(const fs::path& path, const Image& image) {
  if (!cv::imwrite(path.string(), to_mat_bgr8(image))) throw io_error("cannot write " + path.string(), "write");
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat_bgr8(image), buf)) throw io_error("PNG encoding failed", "encode");
  return buf;
}

Image decode_image(const std::vector<std::uint8_t>& bytes) {
  const cv::Mat m = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw io_error("cannot decode image bytes", "decode");
  return from_mat(m);
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Image> read_video(const fs::path& source) {
  std::error_code ec;
  if (!fs::exists(source, ec)) throw io_error("video source " + source.string() + " does not exist", "decode");
  std::vector<Image> frames;
  if (fs::is_directory(source)) {
    for (const auto& p : list_frame_files(source)) frames.push_back(read_image(p));
    if (frames.empty()) throw io_error("no image frames in " + source.string(), "decode");
    return frames;
  }
  cv::VideoCapture cap(source.string());
  if (!cap.isOpened()) throw io_error("cannot open video " + source.string(), "decode");
  cv::Mat m;
  while (cap.read(m)) frames.push_back(from_mat(m));
  if (frames.empty()) throw io_error("video " + source.string() + " has no decodable frames", "decode");
  return frames;
}

Image preprocess_frame(const Image& frame, int resolution) {
  if (resolution <= 0) throw config_error("resolution must be positive");
  const int side = std::min(frame.height, frame.width);
  const int y0 = (frame.height - side) / 2;
  const int x0 = (frame.width - side) / 2;
  if (side == resolution) {
    Image out(frame.channels, side, side);
    for (int c = 0; c < frame.channels; ++c) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) out.at(c, y, x) = frame.at(c, y + y0, x + x0);
      }
    }
    return out;
  }
  cv::Mat crop(side, side, CV_64FC3);
  for (int y = 0; y < side; ++y) {
    auto* row = crop.ptr<cv::Vec3d>(y);
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) row[x][c] = frame.at(frame.channels == 1 ? 0 : c, y + y0, x + x0);
    }
  }
  cv::Mat resized;
  cv::resize(crop, resized, cv::Size(resolution, resolution), 0, 0,
             resolution < side ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out(3, resolution, resolution);
  for (int y = 0; y < resolution; ++y) {
    const auto* row = resized.ptr<cv::Vec3d>(y);
    for (int x = 0; x < resolution; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(row[x][c], 0.0, 1.0);
    }
  }
  return out;
}

Image read_first_frame(const fs::path& source) {
  std::error_code ec;
  if (!fs::exists(source, ec)) throw io_error("video source " + source.string() + " does not exist", "decode");
  if (fs::is_directory(source)) {
    const auto files = list_frame_files(source);
    if (files.empty()) throw io_error("no image frames in " + source.string(), "decode");
    return read_image(files.front());
  }
  if (is_image_file(source)) return read_image(source);
  cv::VideoCapture cap(source.string());
  cv::Mat m;
  if (!cap.isOpened() || !cap.read(m)) throw io_error("cannot read a frame from " + source.string(), "decode");
  return from_mat(m);
}

}  // namespace eve
