#include "eve/schedule.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "eve/error.hpp"

namespace eve {
namespace {

void check_unit_interval(double b, const char* what) {
  if (!(b > 0.0 && b < 1.0)) {
    throw config_error(std::string(what) + " must lie in (0, 1), got " + std::to_string(b), "schedule");
  }
}

std::vector<double> make_betas(int n, const BetaSpec& spec) {
  std::vector<double> betas(n);
  switch (spec.kind) {
    case BetaKind::linear:
    case BetaKind::scaled_linear: {
      check_unit_interval(spec.start, "beta start");
      check_unit_interval(spec.end, "beta end");
      if (spec.end < spec.start) throw config_error("beta endpoints must be non-decreasing", "schedule");
      const bool scaled = spec.kind == BetaKind::scaled_linear;
      const double a = scaled ? std::sqrt(spec.start) : spec.start;
      const double b = scaled ? std::sqrt(spec.end) : spec.end;
      for (int i = 0; i < n; ++i) {
        const double frac = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
        const double v = a + (b - a) * frac;
        betas[i] = scaled ? v * v : v;
      }
      break;
    }
    case BetaKind::explicit_list:
      if (static_cast<int>(spec.values.size()) != n) {
        throw config_error("explicit beta list length does not match train_steps", "schedule");
      }
      betas = spec.values;
      break;
  }
  for (double b : betas) check_unit_interval(b, "beta");
  return betas;
}

void check_frames(std::span<const Tensor3> z, std::span<const Tensor3> other, const char* what) {
  if (z.size() != other.size()) {
    throw std::invalid_argument(std::string(what) + ": frame count mismatch");
  }
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (!z[k].same_shape(other[k])) throw std::invalid_argument(std::string(what) + ": frame shape mismatch");
  }
}

void check_finite(std::span<const Tensor3> frames, const char* what) {
  for (const auto& f : frames) {
    if (!all_finite(f.data)) throw numeric_error(std::string(what) + ": non-finite latent entry", "ddim");
  }
}

std::vector<Tensor3> affine(std::span<const Tensor3> z, std::span<const Tensor3> eps, StepCoefficients c) {
  std::vector<Tensor3> out(z.begin(), z.end());
  const int frames = static_cast<int>(z.size());
#pragma omp parallel for schedule(static) if (frames > 1 && z[0].size() >= 4096)
  for (int k = 0; k < frames; ++k) {
    auto& o = out[k].data;
    const auto& e = eps[k].data;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c.scale * o[i] + c.noise_coef * e[i];
  }
  return out;
}

void check_step(int step, const NoiseSchedule& sched) {
  if (step < 1 || step > sched.ddim_steps()) {
    throw std::out_of_range("DDIM step " + std::to_string(step) + " outside [1, " +
                            std::to_string(sched.ddim_steps()) + "]");
  }
}

}  // namespace

double NoiseSchedule::alpha_bar_at_timestep(int t) const {
  if (t < 0 || t > train_steps()) throw std::out_of_range("training timestep out of range");
  return t == 0 ? 1.0 : alpha_bars_[t - 1];
}

int NoiseSchedule::timestep(int step) const {
  if (step < 1 || step > ddim_steps()) throw std::out_of_range("DDIM step out of range");
  return timestep_map_[step - 1];
}

double NoiseSchedule::alpha_bar_at_step(int step) const {
  if (step < 0 || step > ddim_steps()) throw std::out_of_range("DDIM step out of range");
  return step == 0 ? 1.0 : alpha_bar_at_timestep(timestep(step));
}

NoiseSchedule build_schedule(int train_steps, int ddim_steps, const BetaSpec& spec) {
  if (train_steps < 1) throw config_error("train_steps must be positive", "schedule");
  if (ddim_steps < 1) throw config_error("ddim_steps must be positive", "schedule");
  if (ddim_steps > train_steps) throw config_error("ddim_steps exceeds train_steps", "schedule");

  NoiseSchedule s;
  s.betas_ = make_betas(train_steps, spec);
  s.alpha_bars_.resize(train_steps);
  double prod = 1.0;
  for (int i = 0; i < train_steps; ++i) {
    prod *= 1.0 - s.betas_[i];
    s.alpha_bars_[i] = prod;
  }
  // Leading alignment: floor stride, first DDIM step at training timestep 1.
  const int stride = train_steps / ddim_steps;
  s.timestep_map_.resize(ddim_steps);
  for (int k = 0; k < ddim_steps; ++k) s.timestep_map_[k] = k * stride + 1;
  return s;
}

void write_schedule_table(std::ostream& os, const NoiseSchedule& sched) {
  os << "# train_steps=" << sched.train_steps() << " ddim_steps=" << sched.ddim_steps() << '\n';
  os << std::setprecision(17);
  for (int t = 1; t <= sched.train_steps(); ++t) {
    os << t << ' ' << sched.betas()[t - 1] << ' ' << sched.alpha_bars()[t - 1] << '\n';
  }
}

NoiseSchedule read_schedule_table(std::istream& is) {
  std::string line;
  int train_steps = -1;
  int ddim_steps = -1;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        if (tok.rfind("train_steps=", 0) == 0) train_steps = std::stoi(tok.substr(12));
        if (tok.rfind("ddim_steps=", 0) == 0) ddim_steps = std::stoi(tok.substr(11));
      }
      continue;
    }
    std::istringstream ls(line);
    int t = 0;
    double beta = 0.0;
    double ab = 0.0;
    if (!(ls >> t >> beta >> ab) || t != static_cast<int>(betas.size()) + 1) {
      throw io_error("malformed schedule row at line " + std::to_string(line_no), "schedule");
    }
    betas.push_back(beta);
    alpha_bars.push_back(ab);
  }
  if (ddim_steps < 1 || train_steps != static_cast<int>(betas.size())) {
    throw io_error("schedule table header missing or inconsistent with rows", "schedule");
  }
  NoiseSchedule s = build_schedule(train_steps, ddim_steps, BetaSpec::explicit_list(betas));
  for (int i = 0; i < train_steps; ++i) {
    if (std::abs(s.alpha_bars()[i] - alpha_bars[i]) > 1e-12 * alpha_bars[i]) {
      throw io_error("alpha_bar column disagrees with cumulative product at t=" + std::to_string(i + 1),
                     "schedule");
    }
  }
  return s;
}

StepCoefficients denoise_coefficients(double a_prev, double a_cur, DdimForm form) {
  const double scale = std::sqrt(a_prev / a_cur);
  const double noise = form == DdimForm::exact ? std::sqrt(1.0 - a_prev) - scale * std::sqrt(1.0 - a_cur)
                                               : std::sqrt(1.0 - a_prev) - std::sqrt(1.0 / a_cur - 1.0);
  return {scale, noise};
}

StepCoefficients invert_coefficients(double a_prev, double a_cur, DdimForm form) {
  const double scale = std::sqrt(a_cur / a_prev);
  const double noise = form == DdimForm::exact ? std::sqrt(1.0 - a_cur) - scale * std::sqrt(1.0 - a_prev)
                                               : std::sqrt(1.0 - a_cur) - std::sqrt(1.0 / a_prev - 1.0);
  return {scale, noise};
}

std::vector<Tensor3> ddim_denoise(std::span<const Tensor3> z, std::span<const Tensor3> eps, double a_prev,
                                  double a_cur, DdimForm form) {
  check_frames(z, eps, "ddim_denoise");
  return affine(z, eps, denoise_coefficients(a_prev, a_cur, form));
}

std::vector<Tensor3> ddim_invert(std::span<const Tensor3> z, std::span<const Tensor3> eps, double a_prev,
                                 double a_cur, DdimForm form) {
  check_frames(z, eps, "ddim_invert");
  return affine(z, eps, invert_coefficients(a_prev, a_cur, form));
}

LatentState ddim_denoise_step(const LatentState& z_t, int step, std::span<const Tensor3> eps,
                              const NoiseSchedule& sched, DdimForm form) {
  check_step(step, sched);
  check_finite(z_t.frames, "ddim_denoise_step");
  check_finite(eps, "ddim_denoise_step");
  return {ddim_denoise(z_t.frames, eps, sched.alpha_bar_at_step(step - 1), sched.alpha_bar_at_step(step), form),
          step - 1};
}

LatentState ddim_invert_step(const LatentState& z_prev, int step, std::span<const Tensor3> eps,
                             const NoiseSchedule& sched, DdimForm form) {
  check_step(step, sched);
  check_finite(z_prev.frames, "ddim_invert_step");
  check_finite(eps, "ddim_invert_step");
  return {ddim_invert(z_prev.frames, eps, sched.alpha_bar_at_step(step - 1), sched.alpha_bar_at_step(step), form),
          step};
}

std::vector<Tensor3> forward_diffuse(std::span<const Tensor3> z0, std::span<const Tensor3> noise, double alpha_bar) {
  check_frames(z0, noise, "forward_diffuse");
  return affine(z0, noise, {std::sqrt(alpha_bar), std::sqrt(1.0 - alpha_bar)});
}

LatentState forward_diffuse(const LatentState& z0, int timestep, std::span<const Tensor3> noise,
                            const NoiseSchedule& sched) {
  return {forward_diffuse(z0.frames, noise, sched.alpha_bar_at_timestep(timestep)), z0.step_index};
}

}  // namespace eve
