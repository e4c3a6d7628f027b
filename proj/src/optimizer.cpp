#include "eve/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "eve/error.hpp"

namespace eve {
namespace {

void check_pair(std::span<const Tensor3> a, std::span<const Tensor3> b) {
  if (a.empty()) throw std::invalid_argument("cosine loss: no frames");
  if (a.size() != b.size()) throw std::invalid_argument("cosine loss: frame count mismatch");
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!a[k].same_shape(b[k])) throw std::invalid_argument("cosine loss: frame shape mismatch");
  }
}

struct FrameStats {
  double uv;
  double nu;
  double nv;
  bool identical;
};

FrameStats frame_stats(const Tensor3& a, const Tensor3& b, std::size_t k) {
  const double nu = l2_norm(a.data);
  const double nv = l2_norm(b.data);
  if (nu == 0.0 || nv == 0.0) {
    throw numeric_error("cosine undefined: frame " + std::to_string(k) + " has zero norm", "optimizer");
  }
  return {dot(a.data, b.data), nu, nv, a.data == b.data};
}

}  // namespace

double cosine_loss(std::span<const Tensor3> a, std::span<const Tensor3> b) {
  check_pair(a, b);
  double total = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto s = frame_stats(a[k], b[k], k);
    if (!s.identical) total += 1.0 - s.uv / (s.nu * s.nv);
  }
  return total / static_cast<double>(a.size());
}

std::vector<Tensor3> cosine_loss_gradient(std::span<const Tensor3> a, std::span<const Tensor3> b) {
  check_pair(a, b);
  const double inv_frames = 1.0 / static_cast<double>(a.size());
  std::vector<Tensor3> grad;
  grad.reserve(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto s = frame_stats(a[k], b[k], k);
    Tensor3 g(a[k].channels, a[k].height, a[k].width);
    if (!s.identical) {
      // dL/du = -( v / (|u||v|) - (u.v) u / (|u|^3 |v|) ), scaled by 1/K.
      const double cv = -inv_frames / (s.nu * s.nv);
      const double cu = inv_frames * s.uv / (s.nu * s.nu * s.nu * s.nv);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = cv * b[k].data[i] + cu * a[k].data[i];
    }
    grad.push_back(std::move(g));
  }
  return grad;
}

std::vector<Tensor3> cosine_loss_gradient_numeric(std::span<const Tensor3> a, std::span<const Tensor3> b,
                                                  double h) {
  check_pair(a, b);
  std::vector<Tensor3> probe(a.begin(), a.end());
  std::vector<Tensor3> grad;
  for (const auto& f : a) grad.emplace_back(f.channels, f.height, f.width);
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].data.size(); ++i) {
      const double orig = probe[k].data[i];
      probe[k].data[i] = orig + h;
      const double up = cosine_loss(probe, b);
      probe[k].data[i] = orig - h;
      const double down = cosine_loss(probe, b);
      probe[k].data[i] = orig;
      grad[k].data[i] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

LatentState optimize_step(const OptimizeInputs& in, const NoiseSchedule& sched, const Backend& backend,
                          const OptimizerConfig& cfg, const OptimizerHook& hook) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw config_error("learning rate must be a finite non-negative number", "optimizer");
  }
  const int timestep = sched.timestep(in.step);
  NoiseRequest req{in.latents.frames, timestep, &in.prompt, in.depth, cfg.attention};

  const auto eps_guided = guided_noise(backend, req, in.prompt, cfg.guidance_scale);
  req.depth = nullptr;
  const auto eps_free = guided_noise(backend, req, in.prompt, cfg.guidance_scale);

  LatentState guided = ddim_denoise_step(in.latents, in.step, eps_guided, sched, cfg.ddim_form);
  const LatentState free = ddim_denoise_step(in.latents, in.step, eps_free, sched, cfg.ddim_form);

  OptimizerTraceRow row;
  row.step = in.step;
  row.timestep = timestep;
  row.loss_before = cosine_loss(guided.frames, free.frames);
  const auto grad = cosine_loss_gradient(guided.frames, free.frames);

  double sq = 0.0;
  for (const auto& g : grad) sq += dot(g.data, g.data);
  row.grad_norm = std::sqrt(sq);

  if (cfg.gradient == GradientMode::numeric_check) {
    const auto num = cosine_loss_gradient_numeric(guided.frames, free.frames);
    double gap = 0.0;
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double nd = l2_norm(num[k].data);
      double diff = 0.0;
      for (std::size_t i = 0; i < grad[k].data.size(); ++i) {
        const double d = grad[k].data[i] - num[k].data[i];
        diff += d * d;
      }
      gap = std::max(gap, nd > 0.0 ? std::sqrt(diff) / nd : std::sqrt(diff));
    }
    row.numeric_gap = gap;
  }

  for (std::size_t k = 0; k < grad.size(); ++k) {
    auto& z = guided.frames[k].data;
    const auto& g = grad[k].data;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= cfg.learning_rate * g[i];
  }
  row.loss_after = cosine_loss(guided.frames, free.frames);
  if (hook) hook(row);
  return guided;
}

}  // namespace eve
