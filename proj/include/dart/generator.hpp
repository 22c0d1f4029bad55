#pragma once

#include "dart/encoders.hpp"

namespace dart {

// Auto-regressive report decoder. Conditioning is a row-concatenated
// memory the decoder cross-attends over: disease-relevant features, a
// text-feature slot (ground-truth features in stage-1 training, the
// learned "gen/null_text" placeholder at stage-1 inference, corrected
// features in stage 2), then the k retrieved text feature blocks. Memory
// rows carry a block-type embedding but no positional encoding, so the
// loss is invariant to the order of the retrieved blocks.

struct ConditioningBundle {
  Matrix memory;                  // (2 + k) * d x e
  std::vector<std::string> tags;  // one per block: disease, text, retrieved...
};

// Additive attention-mask value for disallowed positions. Large enough
// that exp underflows to exactly 0, so masked candidates cannot leak.
inline constexpr double kMaskNegInf = -1e9;

void init_generator(ParamStore& store, const ModelConfig& cfg, Rng& rng);

std::vector<std::string> bundle_tags(std::size_t k);
Var bundle_memory_tape(Tape& tape, const ParamVars& params, Var f_d, Var f_t_slot,
                       const std::vector<Var>& retrieved);
ConditioningBundle build_bundle(const ParamStore& store, const Matrix& f_d,
                                const Matrix& f_t_slot, const std::vector<Matrix>& retrieved);

// Strictly-causal additive mask: row t allows columns <= t.
Matrix causal_mask(std::size_t n);

// Teacher-forced next-token logits for input positions 0..L-1.
Var decoder_logits_tape(Tape& tape, const ParamVars& params,
                        const std::vector<std::size_t>& inputs, Var memory,
                        const ModelConfig& cfg);

// -sum_t log P(target_t | target_<t, memory): per-sequence sum; the batch
// mean lives in the trainer. target must start at the sequence-start
// marker, contain no padding, and hold at least two tokens.
Var generation_loss_tape(Tape& tape, const ParamVars& params, Var memory,
                         const std::vector<std::size_t>& target, const ModelConfig& cfg);
double generation_loss(const ParamStore& store, const Matrix& memory,
                       const std::vector<std::size_t>& target, const ModelConfig& cfg);

struct DecodeResult {
  std::vector<std::size_t> ids;  // starts at BOS; ends with EOS unless truncated
  bool truncated = false;        // hit max_len before the end marker
  double score = 0.0;            // length-normalized log-likelihood of generated tokens
};

// Greedy decoding on an incremental per-step path with cached attention
// state (the one forward implementation that is NOT the training graph;
// tests pin it to the teacher-forced logits). Ties break toward the
// lowest token id. max_len counts the whole sequence including BOS.
DecodeResult decode_greedy(const ParamStore& store, const Matrix& memory,
                           const ModelConfig& cfg, std::size_t max_len);

// Length-normalized beam search sharing the same incremental step;
// width 1 reproduces greedy exactly.
DecodeResult decode_beam(const ParamStore& store, const Matrix& memory, const ModelConfig& cfg,
                         std::size_t max_len, std::size_t width);

}  // namespace dart
