#include "eve/attention.hpp"

#include <stdexcept>
#include <string>

#include "eve/error.hpp"
#include "eve/kernels.hpp"

namespace eve {

std::string_view to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::self: return "sa";
    case AttentionMode::frame_align: return "faa";
    case AttentionMode::sparse_causal: return "sca";
  }
  return "?";
}

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "sa" || s == "SA") return AttentionMode::self;
  if (s == "faa" || s == "FAA") return AttentionMode::frame_align;
  if (s == "sca" || s == "SCA") return AttentionMode::sparse_causal;
  throw config_error("unknown attention mode '" + std::string(s) + "' (expected sa, faa or sca)");
}

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v) { return kernels::attention(q, k, v); }

Matrix self_attention_frame(AttentionMode mode, int frame, std::span<const Matrix> frame_tokens,
                            const AttentionWeights& w) {
  if (frame < 0 || frame >= static_cast<int>(frame_tokens.size())) {
    throw std::out_of_range("frame index " + std::to_string(frame) + " out of range");
  }
  const Matrix& own = frame_tokens[frame];
  const Matrix q = kernels::project(own, w.query);
  switch (mode) {
    case AttentionMode::self:
      return kernels::attention(q, kernels::project(own, w.key), kernels::project(own, w.value));
    case AttentionMode::frame_align: {
      const Matrix& first = frame_tokens[0];
      return kernels::attention(q, kernels::project(first, w.key), kernels::project(first, w.value));
    }
    case AttentionMode::sparse_causal: {
      const Matrix& prev = frame_tokens[frame == 0 ? 0 : frame - 1];
      const Matrix ctx = concat_rows(frame_tokens[0], prev);
      return kernels::attention(q, kernels::project(ctx, w.key), kernels::project(ctx, w.value));
    }
  }
  throw std::logic_error("unreachable attention mode");
}

Matrix cross_attention(const Matrix& frame_tokens, const PromptEmbedding& prompt, const AttentionWeights& w) {
  if (prompt.empty()) throw std::invalid_argument("cross_attention: empty prompt embedding");
  return kernels::attention(kernels::project(frame_tokens, w.query), kernels::project(prompt.tokens, w.key),
                            kernels::project(prompt.tokens, w.value));
}

}  // namespace eve
