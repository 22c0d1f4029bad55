#pragma once

#include <string>
#include <vector>

#include "dart/model_config.hpp"
#include "dart/param_vars.hpp"
#include "dart/rng.hpp"

namespace dart {

// Image and text encoders. Both map their input to a d x e feature
// matrix: inputs become a token sequence (patch projections or token
// embeddings), pass through pre-norm self-attention blocks, and d learned
// slot queries pool the token states by cross-attention:
//   out = slots + softmax(slots . tokens^T / sqrt(e)) . tokens
// The additive slot term means a zero token stream yields exactly the
// slot queries, and pooling output keeps shape d x e for any token count.

// Weight init scale shared by every learned table in the model.
inline constexpr double kInitStddev = 0.02;

// Registers all encoder parameters (normal init, sigma 0.02; layer-norm
// gain 1 / bias 0).
void init_image_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng);
void init_text_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Differentiable forward passes. The plain overloads run the same graph
// on a throwaway tape with constants, so trained and evaluated values are
// identical by construction.
Var encode_image_tape(Tape& tape, const ParamVars& params, const std::vector<Matrix>& views,
                      const ModelConfig& cfg);
Matrix encode_image(const ParamStore& store, const std::vector<Matrix>& views,
                    const ModelConfig& cfg);

Var encode_text_tape(Tape& tape, const ParamVars& params, const std::vector<std::size_t>& ids,
                     const ModelConfig& cfg);
Matrix encode_text(const ParamStore& store, const std::vector<std::size_t>& ids,
                   const ModelConfig& cfg);

// Building blocks shared with the generator.
// Multi-head attention: queries from q_src, keys/values from kv_src,
// optional additive mask (q rows x kv rows, 0 or -1e9 entries).
Var multi_head_attention(Tape& tape, Var q_src, Var kv_src, Var wq, Var wk, Var wv, Var wo,
                         std::size_t heads, const Matrix* mask = nullptr);
// One pre-norm encoder block: x + MHA(LN1(x)), then x + FFN(LN2(x)).
Var encoder_block(Tape& tape, const ParamVars& params, const std::string& prefix, Var x,
                  std::size_t heads);
// Slot-query pooling as described above.
Var slot_pool(Tape& tape, Var slots, Var tokens, double e_width);

// Registers one attention + feed-forward block's parameters.
void init_block(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
// Registers attention projections only (used by decoder cross-attention).
void init_attention(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                    Rng& rng);

// Cuts a view into non-overlapping patch rows (patch_pixels wide,
// row-major within the patch), ordered by patch grid position.
Matrix patch_rows(const Matrix& view, std::size_t patch);

}  // namespace dart
