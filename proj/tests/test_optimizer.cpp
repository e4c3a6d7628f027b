#include <doctest.h>

#include <cmath>

#include "eve/error.hpp"
#include "eve/optimizer.hpp"
#include "eve/toy_backend.hpp"
#include "support.hpp"

using namespace eve;

namespace {

std::vector<Tensor3> frames_of(std::initializer_list<std::vector<double>> rows) {
  std::vector<Tensor3> out;
  for (const auto& r : rows) {
    Tensor3 t(1, 1, static_cast<int>(r.size()));
    t.data = r;
    out.push_back(t);
  }
  return out;
}

// Per-frame gradient written out directly from the cosine formula.
std::vector<double> formula_gradient(const std::vector<double>& u, const std::vector<double>& v, int frames) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  std::vector<double> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    g[i] = -(v[i] / (nu * nv) - uv * u[i] / (nu * nu * nu * nv)) / frames;
  }
  return g;
}

DepthFeatures random_depth(const Backend& b, int frames, int lh, int lw, std::mt19937_64& rng) {
  DepthFeatures m;
  for (int k = 0; k < frames; ++k) {
    std::vector<Tensor3> pyramid;
    for (const auto& s : b.stage_shapes(lh, lw)) pyramid.push_back(test::random_tensor(s.channels, s.height, s.width, rng));
    m.frames.push_back(std::move(pyramid));
  }
  return m;
}

}  // namespace

TEST_CASE("cosine loss examples") {
  CHECK(cosine_loss(frames_of({{1.0, 2.0, 3.0}}), frames_of({{1.0, 2.0, 3.0}})) == 0.0);
  CHECK(cosine_loss(frames_of({{1.0, 0.0}}), frames_of({{0.0, 1.0}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_loss(frames_of({{1.0, 1.0}}), frames_of({{1.0, 0.0}})) == doctest::Approx(0.29289).epsilon(1e-5));
  CHECK(cosine_loss(frames_of({{1.0, 1.0}}), frames_of({{1.0, 0.0}})) ==
        doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-15));
  // per-frame mean: losses 0 and 1
  CHECK(cosine_loss(frames_of({{1.0, 0.0}, {1.0, 0.0}}), frames_of({{1.0, 0.0}, {0.0, 1.0}})) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cosine_loss(frames_of({{1.0, 0.0}}), frames_of({{-1.0, 0.0}})) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("cosine loss rejects degenerate input") {
  try {
    cosine_loss(frames_of({{0.0, 0.0}}), frames_of({{1.0, 0.0}}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
  CHECK_THROWS_AS(cosine_loss_gradient(frames_of({{1.0, 0.0}}), frames_of({{0.0, 0.0}})), Error);
  CHECK_THROWS_AS(cosine_loss(frames_of({{1.0, 0.0}}), frames_of({{1.0, 0.0, 1.0}})), std::invalid_argument);
}

TEST_CASE("cosine gradient") {
  std::mt19937_64 rng(30);
  SUBCASE("zero at a == b") {
    const auto a = test::random_frames(2, 2, 3, 3, rng);
    for (const auto& g : cosine_loss_gradient(a, a)) {
      for (double x : g.data) CHECK(x == 0.0);
    }
  }
  SUBCASE("matches the closed-form expression and is orthogonal to a") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = test::random_frames(3, 1, 2, 4, rng);
      const auto b = test::random_frames(3, 1, 2, 4, rng);
      const auto g = cosine_loss_gradient(a, b);
      for (int k = 0; k < 3; ++k) {
        CHECK(test::max_abs_diff(g[k].data, formula_gradient(a[k].data, b[k].data, 3)) < 1e-14);
        CHECK(std::abs(dot(g[k].data, a[k].data)) <= 1e-10);
      }
    }
  }
  SUBCASE("random 8-dim vectors against central differences") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto a = test::random_frames(1, 1, 1, 8, rng);
      const auto b = test::random_frames(1, 1, 1, 8, rng);
      const auto g = cosine_loss_gradient(a, b);
      const auto n = cosine_loss_gradient_numeric(a, b, 1e-6);
      double diff = 0.0;
      for (int i = 0; i < 8; ++i) diff += (g[0].data[i] - n[0].data[i]) * (g[0].data[i] - n[0].data[i]);
      CHECK(std::sqrt(diff) / l2_norm(n[0].data) <= 1e-4);
    }
  }
}

TEST_CASE("optimize_step") {
  const ToyBackend backend;
  const auto sched = build_schedule(1000, 20, BetaSpec::toy_default());
  std::mt19937_64 rng(31);
  const LatentState z{test::random_frames(2, 4, 4, 4, rng), 10};
  const PromptEmbedding p = backend.encode_text("a small boat");
  const DepthFeatures m = random_depth(backend, 2, 4, 4, rng);
  OptimizerConfig cfg;

  const auto branch = [&](const DepthFeatures* depth) {
    NoiseRequest req{z.frames, sched.timestep(10), &p, depth, cfg.attention};
    return ddim_denoise_step(z, 10, backend.predict_noise(req), sched);
  };

  SUBCASE("without depth the output is plain DDIM denoising") {
    std::vector<OptimizerTraceRow> rows;
    const auto out = optimize_step({z, 10, p, nullptr}, sched, backend, cfg, [&](const auto& r) { rows.push_back(r); });
    CHECK(out.frames == branch(nullptr).frames);
    CHECK(out.step_index == 9);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].loss_before == 0.0);
    CHECK(rows[0].grad_norm == 0.0);
  }
  SUBCASE("zero learning rate returns the depth-guided branch") {
    cfg.learning_rate = 0.0;
    CHECK(optimize_step({z, 10, p, &m}, sched, backend, cfg).frames == branch(&m).frames);
  }
  SUBCASE("one gradient step against the depth-free target") {
    cfg.learning_rate = 0.8;
    const auto guided = branch(&m);
    const auto free = branch(nullptr);
    const auto g = cosine_loss_gradient(guided.frames, free.frames);
    const auto out = optimize_step({z, 10, p, &m}, sched, backend, cfg);
    for (std::size_t k = 0; k < out.frames.size(); ++k) {
      for (std::size_t i = 0; i < out.frames[k].size(); ++i) {
        CHECK(out.frames[k].data[i] == doctest::Approx(guided.frames[k].data[i] - 0.8 * g[k].data[i]).epsilon(1e-14));
      }
    }
  }
  SUBCASE("two noise evaluations per step") {
    InstrumentedBackend counted(backend);
    optimize_step({z, 10, p, &m}, sched, counted, cfg);
    CHECK(counted.noise_evaluations() == 2);
  }
  SUBCASE("numeric check mode reports a small gap") {
    cfg.gradient = GradientMode::numeric_check;
    OptimizerTraceRow row;
    optimize_step({z, 10, p, &m}, sched, backend, cfg, [&](const auto& r) { row = r; });
    CHECK(row.loss_before > 0.0);
    CHECK(row.numeric_gap < 1e-3);
    CHECK(row.timestep == sched.timestep(10));
  }
  SUBCASE("invalid learning rate") {
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(optimize_step({z, 10, p, &m}, sched, backend, cfg), Error);
  }
}
