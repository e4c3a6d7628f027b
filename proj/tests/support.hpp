#pragma once

// Shared helpers for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "eve/backend.hpp"
#include "eve/frames_io.hpp"
#include "eve/tensor.hpp"

namespace eve::test {

namespace fs = std::filesystem;

inline fs::path fixture_dir() { return fs::path(EVE_FIXTURE_DIR); }

// Unique, initially empty scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "eve-test") {
    static int counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline Tensor3 random_tensor(int c, int h, int w, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor3 t(c, h, w);
  for (double& x : t.data) x = d(rng);
  return t;
}

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.data) x = d(rng);
  return m;
}

inline std::vector<Tensor3> random_frames(int k, int c, int h, int w, std::mt19937_64& rng, double stddev = 1.0) {
  std::vector<Tensor3> out;
  for (int i = 0; i < k; ++i) out.push_back(random_tensor(c, h, w, rng, stddev));
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return max_abs_diff(a.data, b.data); }

inline double relative_error(const std::vector<Tensor3>& got, const std::vector<Tensor3>& want) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < want.size(); ++k) {
    for (std::size_t i = 0; i < want[k].size(); ++i) {
      const double d = got[k].data[i] - want[k].data[i];
      num += d * d;
      den += want[k].data[i] * want[k].data[i];
    }
  }
  return std::sqrt(num / den);
}

// Smooth synthetic RGB frame with a moving blob; deterministic in (index, size).
inline Image synthetic_frame(int index, int height, int width) {
  Image img(3, height, width);
  const double cx = 0.25 * width + 2.0 * index;
  const double cy = 0.5 * height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const double blob = std::exp(-r2 / (0.02 * width * height));
      img.at(0, y, x) = 0.2 + 0.5 * x / width + 0.3 * blob;
      img.at(1, y, x) = 0.3 + 0.4 * y / height;
      img.at(2, y, x) = 0.6 - 0.3 * blob;
    }
  }
  return img;
}

inline void write_synthetic_video(const fs::path& dir, int frames, int height, int width) {
  fs::create_directories(dir);
  for (int i = 0; i < frames; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03d.png", i);
    write_png(dir / name, synthetic_frame(i, height, width));
  }
}

// Delegates everything to a wrapped backend but predicts zero noise.
class ZeroNoiseBackend final : public Backend {
 public:
  explicit ZeroNoiseBackend(const Backend& inner) : inner_(inner) {}
  BackendInfo info() const override { return inner_.info(); }
  Tensor3 encode_image(const Image& image) const override { return inner_.encode_image(image); }
  Image decode_latent(const Tensor3& latent) const override { return inner_.decode_latent(latent); }
  PromptEmbedding encode_text(std::string_view prompt) const override { return inner_.encode_text(prompt); }
  const PromptEmbedding& null_prompt() const override { return inner_.null_prompt(); }
  DepthFeatures encode_depth(std::span<const Tensor3> maps) const override { return inner_.encode_depth(maps); }
  std::vector<StageShape> stage_shapes(int h, int w) const override { return inner_.stage_shapes(h, w); }
  std::vector<Tensor3> predict_noise(const NoiseRequest& request) const override {
    std::vector<Tensor3> out;
    for (const auto& z : request.latents) out.emplace_back(z.channels, z.height, z.width, 0.0);
    return out;
  }

 private:
  const Backend& inner_;
};

}  // namespace eve::test
