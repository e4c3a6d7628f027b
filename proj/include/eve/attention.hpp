#pragma once

#include <span>
#include <string_view>

#include "eve/tensor.hpp"

namespace eve {

// Which frames feed keys/values of the self-attention slot.
enum class AttentionMode {
  self,          // SA: keys/values from the query frame itself
  frame_align,   // FAA: keys/values from the first frame
  sparse_causal  // SCA: keys/values from [first frame; previous frame]
};

std::string_view to_string(AttentionMode mode);
AttentionMode parse_attention_mode(std::string_view s);  // "sa" | "faa" | "sca"

// Frozen projection matrices of one attention site. Each is (out_dim x in_dim);
// cross-attention keys/values read the text width, everything else the channel width.
struct AttentionWeights {
  Matrix query;
  Matrix key;
  Matrix value;
};

// Token-feature matrix (tokens x text_dim) produced by the text encoder.
struct PromptEmbedding {
  Matrix tokens;

  bool empty() const noexcept { return tokens.rows == 0; }
};

// softmax(Q K^T / sqrt(d)) V.
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v);

// Self-attention slot output for frame `frame` (0-based) given every frame's
// token matrix. Under sparse-causal mode frame 0 has no predecessor, so its
// key/value set is the first frame duplicated.
Matrix self_attention_frame(AttentionMode mode, int frame, std::span<const Matrix> frame_tokens,
                            const AttentionWeights& w);

// Query from the frame tokens, keys/values from the prompt. Cross-attention is
// never frame-aligned.
Matrix cross_attention(const Matrix& frame_tokens, const PromptEmbedding& prompt, const AttentionWeights& w);

}  // namespace eve
