#include <doctest.h>

#include <cmath>

#include "eve/attention.hpp"
#include "eve/kernels.hpp"
#include "support.hpp"

using namespace eve;

namespace {

// Dense reference: softmax(Q K^T / sqrt(d)) V with explicit loops.
Matrix brute_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix out(q.rows, v.cols);
  for (int i = 0; i < q.rows; ++i) {
    std::vector<double> s(k.rows);
    double mx = -1e300;
    for (int j = 0; j < k.rows; ++j) {
      double acc = 0.0;
      for (int c = 0; c < q.cols; ++c) acc += q(i, c) * k(j, c);
      s[j] = acc / std::sqrt(static_cast<double>(q.cols));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (int j = 0; j < k.rows; ++j) {
      for (int c = 0; c < v.cols; ++c) out(i, c) += s[j] / z * v(j, c);
    }
  }
  return out;
}

Matrix brute_project(const Matrix& x, const Matrix& w) {
  Matrix out(x.rows, w.rows);
  for (int i = 0; i < x.rows; ++i) {
    for (int o = 0; o < w.rows; ++o) {
      for (int c = 0; c < x.cols; ++c) out(i, o) += x(i, c) * w(o, c);
    }
  }
  return out;
}

Tensor3 brute_conv(const Tensor3& in, const ConvWeights& w, int stride) {
  const int pad = w.kernel / 2;
  const int oh = (in.height + 2 * pad - w.kernel) / stride + 1;
  const int ow = (in.width + 2 * pad - w.kernel) / stride + 1;
  Tensor3 out(w.out_channels, oh, ow);
  for (int o = 0; o < w.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = w.bias.empty() ? 0.0 : w.bias[o];
        for (int i = 0; i < w.in_channels; ++i) {
          for (int ky = 0; ky < w.kernel; ++ky) {
            for (int kx = 0; kx < w.kernel; ++kx) {
              const int sy = y * stride + ky - pad;
              const int sx = x * stride + kx - pad;
              if (sy < 0 || sx < 0 || sy >= in.height || sx >= in.width) continue;
              acc += w.at(o, i, ky, kx) * in.at(i, sy, sx);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

AttentionWeights random_weights(int dim, std::mt19937_64& rng, int kv_in = -1) {
  if (kv_in < 0) kv_in = dim;
  return {test::random_matrix(dim, dim, rng, 0.5), test::random_matrix(dim, kv_in, rng, 0.5),
          test::random_matrix(dim, kv_in, rng, 0.5)};
}

Matrix identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("softmax of identity rows") {
  const Matrix eye = identity(2);
  const Matrix p = kernels::attention_probs(eye, eye);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  CHECK(p(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
  CHECK(p(0, 0) == doctest::Approx(0.6698).epsilon(1e-4));
  CHECK(p(0, 1) == doctest::Approx(0.3302).epsilon(1e-4));
  const Matrix out = scaled_dot_attention(eye, eye, eye);
  CHECK(out(0, 0) == doctest::Approx(0.6698).epsilon(1e-4));
  CHECK(out(0, 1) == doctest::Approx(0.3302).epsilon(1e-4));
}

TEST_CASE("attention kernel matches the dense reference and rows sum to one") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 8);
    const Matrix q = test::random_matrix(1 + static_cast<int>(rng() % 20), d, rng);
    const Matrix k = test::random_matrix(1 + static_cast<int>(rng() % 20), d, rng);
    const Matrix v = test::random_matrix(k.rows, 1 + static_cast<int>(rng() % 6), rng);
    CHECK(test::max_abs_diff(scaled_dot_attention(q, k, v), brute_attention(q, k, v)) < 1e-12);
    const Matrix p = kernels::attention_probs(q, k);
    for (int i = 0; i < p.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < p.cols; ++j) s += p(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("single key returns its value row") {
  std::mt19937_64 rng(11);
  const Matrix q = test::random_matrix(5, 3, rng);
  const Matrix k = test::random_matrix(1, 3, rng);
  const Matrix v = test::random_matrix(1, 4, rng);
  const Matrix out = scaled_dot_attention(q, k, v);
  for (int i = 0; i < 5; ++i) {
    for (int c = 0; c < 4; ++c) CHECK(out(i, c) == doctest::Approx(v(0, c)).epsilon(1e-14));
  }
}

TEST_CASE("duplicated keys and values leave attention unchanged") {
  std::mt19937_64 rng(12);
  const Matrix q = test::random_matrix(6, 4, rng);
  const Matrix k = test::random_matrix(3, 4, rng);
  const Matrix v = test::random_matrix(3, 4, rng);
  CHECK(test::max_abs_diff(scaled_dot_attention(q, concat_rows(k, k), concat_rows(v, v)),
                           scaled_dot_attention(q, k, v)) < 1e-12);
}

TEST_CASE("kernel shape errors") {
  CHECK_THROWS_AS(kernels::attention(Matrix(2, 3), Matrix(2, 4), Matrix(2, 4)), std::invalid_argument);
  CHECK_THROWS_AS(kernels::attention(Matrix(2, 3), Matrix(2, 3), Matrix(3, 3)), std::invalid_argument);
  CHECK_THROWS_AS(kernels::attention(Matrix(2, 3), Matrix(0, 3), Matrix(0, 3)), std::invalid_argument);
  CHECK_THROWS_AS(kernels::project(Matrix(2, 3), Matrix(4, 2)), std::invalid_argument);
  ConvWeights w{2, 3, 3, std::vector<double>(2 * 3 * 9, 0.1), {}};
  CHECK_THROWS_AS(kernels::conv2d(Tensor3(2, 4, 4), w), std::invalid_argument);
  CHECK_THROWS_AS(kernels::conv2d(Tensor3(3, 4, 4), w, 0), std::invalid_argument);
}

TEST_CASE("serial and OpenMP kernels are bit-identical and match brute force") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 300);
    const Matrix x = test::random_matrix(n, 8, rng);
    const Matrix w = test::random_matrix(12, 8, rng);
    const Matrix ps = kernels::serial::project(x, w);
    CHECK(ps == kernels::omp::project(x, w));
    CHECK(test::max_abs_diff(ps, brute_project(x, w)) < 1e-12);

    const Matrix k = test::random_matrix(1 + static_cast<int>(rng() % 300), 8, rng);
    const Matrix v = test::random_matrix(k.rows, 5, rng);
    CHECK(kernels::serial::attention(x, k, v) == kernels::omp::attention(x, k, v));
    CHECK(kernels::serial::attention_probs(x, k) == kernels::omp::attention_probs(x, k));

    const bool bias = trial % 2 == 0;
    const int kernel = trial % 3 == 0 ? 1 : 3;
    ConvWeights cw{6, 3, kernel, {}, {}};
    cw.weights = test::random_tensor(1, 1, 6 * 3 * kernel * kernel, rng).data;
    if (bias) cw.bias = test::random_tensor(1, 1, 6, rng).data;
    const Tensor3 in = test::random_tensor(3, 5 + static_cast<int>(rng() % 30), 5 + static_cast<int>(rng() % 30), rng);
    for (int stride : {1, 2}) {
      const Tensor3 cs = kernels::serial::conv2d(in, cw, stride);
      CHECK(cs == kernels::omp::conv2d(in, cw, stride));
      CHECK(cs.height == kernels::conv_out_extent(in.height, kernel, stride));
      CHECK(test::max_abs_diff(cs.data, brute_conv(in, cw, stride).data) < 1e-12);
    }
  }
}

TEST_CASE("self-attention modes") {
  std::mt19937_64 rng(14);
  const auto w = random_weights(6, rng);
  std::vector<Matrix> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(test::random_matrix(5, 6, rng));

  SUBCASE("single-frame video: FAA equals SA") {
    const std::vector<Matrix> one{frames[0]};
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::frame_align, 0, one, w),
                             self_attention_frame(AttentionMode::self, 0, one, w)) <= 1e-6);
  }
  SUBCASE("first frame: SCA equals FAA") {
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::sparse_causal, 0, frames, w),
                             self_attention_frame(AttentionMode::frame_align, 0, frames, w)) <= 1e-6);
  }
  SUBCASE("FAA with an identical first frame equals SA") {
    auto same = frames;
    same[0] = same[2];
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::frame_align, 2, same, w),
                             self_attention_frame(AttentionMode::self, 2, same, w)) <= 1e-12);
  }
  SUBCASE("each mode reads the documented key/value frames") {
    const auto proj = [&](const Matrix& m, const Matrix& pw) { return brute_project(m, pw); };
    const Matrix q = proj(frames[3], w.query);
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::self, 3, frames, w),
                             brute_attention(q, proj(frames[3], w.key), proj(frames[3], w.value))) < 1e-12);
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::frame_align, 3, frames, w),
                             brute_attention(q, proj(frames[0], w.key), proj(frames[0], w.value))) < 1e-12);
    const Matrix ctx = concat_rows(frames[0], frames[2]);
    CHECK(test::max_abs_diff(self_attention_frame(AttentionMode::sparse_causal, 3, frames, w),
                             brute_attention(q, proj(ctx, w.key), proj(ctx, w.value))) < 1e-12);
  }
  SUBCASE("frame index out of range") {
    CHECK_THROWS_AS(self_attention_frame(AttentionMode::self, 4, frames, w), std::out_of_range);
    CHECK_THROWS_AS(self_attention_frame(AttentionMode::self, -1, frames, w), std::out_of_range);
  }
}

TEST_CASE("cross-attention") {
  std::mt19937_64 rng(15);
  const auto w = random_weights(2, rng, 3);
  const Matrix z = test::random_matrix(2, 2, rng);

  SUBCASE("random 3-token prompt against a dense reference") {
    const PromptEmbedding p{test::random_matrix(3, 3, rng)};
    const Matrix want = brute_attention(brute_project(z, w.query), brute_project(p.tokens, w.key),
                                        brute_project(p.tokens, w.value));
    CHECK(test::max_abs_diff(cross_attention(z, p, w), want) <= 1e-8);
  }
  SUBCASE("single token gives its value projection on every row") {
    const PromptEmbedding p{test::random_matrix(1, 3, rng)};
    const Matrix vproj = brute_project(p.tokens, w.value);
    const Matrix out = cross_attention(z, p, w);
    for (int i = 0; i < out.rows; ++i) {
      for (int c = 0; c < out.cols; ++c) CHECK(out(i, c) == doctest::Approx(vproj(0, c)).epsilon(1e-12));
    }
  }
  SUBCASE("two identical tokens equal one token") {
    const Matrix t = test::random_matrix(1, 3, rng);
    CHECK(test::max_abs_diff(cross_attention(z, PromptEmbedding{concat_rows(t, t)}, w),
                             cross_attention(z, PromptEmbedding{t}, w)) < 1e-12);
  }
  SUBCASE("empty prompt") { CHECK_THROWS(cross_attention(z, PromptEmbedding{}, w)); }
}

TEST_CASE("attention mode names") {
  CHECK(parse_attention_mode("faa") == AttentionMode::frame_align);
  CHECK(parse_attention_mode("SCA") == AttentionMode::sparse_causal);
  CHECK(to_string(AttentionMode::self) == "sa");
  CHECK_THROWS(parse_attention_mode("stsa"));
}
