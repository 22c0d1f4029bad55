#include "dart/generator.hpp"

#include <algorithm>
#include <cmath>

#include "dart/error.hpp"
#include "dart/tokenizer.hpp"

namespace dart {

void init_generator(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  if (cfg.vocab_size < 4) throw UsageError("generator needs vocab_size >= 4");
  store.create_normal("gen/tok", cfg.vocab_size, cfg.e, rng, kInitStddev);
  store.create_normal("gen/pos", cfg.max_len, cfg.e, rng, kInitStddev);
  store.create_normal("gen/block_type", 3, cfg.e, rng, kInitStddev);
  store.create_normal("gen/null_text", cfg.d, cfg.e, rng, kInitStddev);
  for (std::size_t b = 0; b < cfg.dec_blocks; ++b) {
    const std::string prefix = "gen/blk" + std::to_string(b);
    init_attention(store, prefix + "/self", cfg, rng);
    init_attention(store, prefix + "/cross", cfg, rng);
    for (const char* ln : {"/ln1", "/ln2", "/ln3"}) {
      store.create(prefix + ln + "/g", 1, cfg.e, 1.0);
      store.create(prefix + ln + "/b", 1, cfg.e, 0.0);
    }
    store.create_normal(prefix + "/ffn/w1", cfg.e, cfg.ffn_hidden(), rng, kInitStddev);
    store.create(prefix + "/ffn/b1", 1, cfg.ffn_hidden(), 0.0);
    store.create_normal(prefix + "/ffn/w2", cfg.ffn_hidden(), cfg.e, rng, kInitStddev);
    store.create(prefix + "/ffn/b2", 1, cfg.e, 0.0);
  }
  store.create("gen/ln_f/g", 1, cfg.e, 1.0);
  store.create("gen/ln_f/b", 1, cfg.e, 0.0);
  store.create_normal("gen/out/w", cfg.e, cfg.vocab_size, rng, kInitStddev);
  store.create("gen/out/b", 1, cfg.vocab_size, 0.0);
}

std::vector<std::string> bundle_tags(std::size_t k) {
  std::vector<std::string> tags{"disease", "text"};
  for (std::size_t i = 0; i < k; ++i) tags.push_back("retrieved");
  return tags;
}

Var bundle_memory_tape(Tape& tape, const ParamVars& params, Var f_d, Var f_t_slot,
                       const std::vector<Var>& retrieved) {
  // node creation can reallocate the tape, so take the shape by value
  const std::size_t rows = tape.value(f_d).rows();
  const std::size_t cols = tape.value(f_d).cols();
  Var types = params["gen/block_type"];
  std::vector<Var> blocks;
  blocks.reserve(2 + retrieved.size());
  blocks.push_back(tape.add_row_broadcast(f_d, tape.slice_rows(types, 0, 1)));
  blocks.push_back(tape.add_row_broadcast(f_t_slot, tape.slice_rows(types, 1, 1)));
  Var retrieved_type = tape.slice_rows(types, 2, 1);
  for (Var r : retrieved) {
    if (tape.value(r).rows() != rows || tape.value(r).cols() != cols) {
      throw DimensionError("bundle block shape " + tape.value(r).shape_str() + ", want " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    blocks.push_back(tape.add_row_broadcast(r, retrieved_type));
  }
  return tape.concat_rows(blocks);
}

ConditioningBundle build_bundle(const ParamStore& store, const Matrix& f_d,
                                const Matrix& f_t_slot, const std::vector<Matrix>& retrieved) {
  Tape tape;
  const ParamVars params(tape, store, /*all_constant=*/true);
  std::vector<Var> retrieved_vars;
  retrieved_vars.reserve(retrieved.size());
  for (const Matrix& r : retrieved) retrieved_vars.push_back(tape.constant(r));
  Var memory = bundle_memory_tape(tape, params, tape.constant(f_d), tape.constant(f_t_slot),
                                  retrieved_vars);
  return ConditioningBundle{tape.value(memory), bundle_tags(retrieved.size())};
}

Matrix causal_mask(std::size_t n) {
  Matrix mask(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) mask.at(i, j) = kMaskNegInf;
  }
  return mask;
}

namespace {

void validate_target(const std::vector<std::size_t>& target, const ModelConfig& cfg) {
  if (target.size() < 2) {
    throw DataError("generation target needs at least 2 tokens, got " +
                    std::to_string(target.size()));
  }
  if (target.front() != Vocabulary::kBos) {
    throw DataError("generation target must begin with the sequence-start token");
  }
  for (std::size_t id : target) {
    if (id == Vocabulary::kPad) throw DataError("generation target contains padding");
    if (id >= cfg.vocab_size) {
      throw DataError("generation target id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(cfg.vocab_size));
    }
  }
  if (target.size() > cfg.max_len) {
    throw DataError("generation target length " + std::to_string(target.size()) +
                    " exceeds max_len " + std::to_string(cfg.max_len));
  }
}

Var decoder_block_tape(Tape& tape, const ParamVars& params, const std::string& prefix, Var x,
                       Var memory, const Matrix& mask, std::size_t heads) {
  const Var n1 = tape.layer_norm(x, params[prefix + "/ln1/g"], params[prefix + "/ln1/b"]);
  x = tape.add(x, multi_head_attention(tape, n1, n1, params[prefix + "/self/wq"],
                                       params[prefix + "/self/wk"], params[prefix + "/self/wv"],
                                       params[prefix + "/self/wo"], heads, &mask));
  const Var n2 = tape.layer_norm(x, params[prefix + "/ln2/g"], params[prefix + "/ln2/b"]);
  x = tape.add(x, multi_head_attention(tape, n2, memory, params[prefix + "/cross/wq"],
                                       params[prefix + "/cross/wk"], params[prefix + "/cross/wv"],
                                       params[prefix + "/cross/wo"], heads));
  const Var n3 = tape.layer_norm(x, params[prefix + "/ln3/g"], params[prefix + "/ln3/b"]);
  const Var h1 = tape.gelu(tape.add_row_broadcast(tape.matmul(n3, params[prefix + "/ffn/w1"]),
                                                  params[prefix + "/ffn/b1"]));
  const Var h2 = tape.add_row_broadcast(tape.matmul(h1, params[prefix + "/ffn/w2"]),
                                        params[prefix + "/ffn/b2"]);
  return tape.add(x, h2);
}

}  // namespace

Var decoder_logits_tape(Tape& tape, const ParamVars& params,
                        const std::vector<std::size_t>& inputs, Var memory,
                        const ModelConfig& cfg) {
  if (inputs.empty()) throw DimensionError("decoder needs at least one input token");
  if (inputs.size() > cfg.max_len) {
    throw DimensionError("decoder input length " + std::to_string(inputs.size()) +
                         " exceeds max_len " + std::to_string(cfg.max_len));
  }
  Var x = tape.add(tape.gather_rows(params["gen/tok"], inputs),
                   tape.slice_rows(params["gen/pos"], 0, inputs.size()));
  const Matrix mask = causal_mask(inputs.size());
  for (std::size_t b = 0; b < cfg.dec_blocks; ++b) {
    x = decoder_block_tape(tape, params, "gen/blk" + std::to_string(b), x, memory, mask,
                           cfg.heads);
  }
  x = tape.layer_norm(x, params["gen/ln_f/g"], params["gen/ln_f/b"]);
  return tape.add_row_broadcast(tape.matmul(x, params["gen/out/w"]), params["gen/out/b"]);
}

Var generation_loss_tape(Tape& tape, const ParamVars& params, Var memory,
                         const std::vector<std::size_t>& target, const ModelConfig& cfg) {
  validate_target(target, cfg);
  const std::vector<std::size_t> inputs(target.begin(), target.end() - 1);
  const std::vector<std::size_t> next(target.begin() + 1, target.end());
  Var logits = decoder_logits_tape(tape, params, inputs, memory, cfg);
  return tape.softmax_cross_entropy(logits, next, 1.0, /*sum_reduction=*/true);
}

double generation_loss(const ParamStore& store, const Matrix& memory,
                       const std::vector<std::size_t>& target, const ModelConfig& cfg) {
  Tape tape;
  const ParamVars params(tape, store, /*all_constant=*/true);
  return tape.value(generation_loss_tape(tape, params, tape.constant(memory), target, cfg))
      .at(0, 0);
}

// ---- incremental decoding ----

namespace {

Matrix cols(const Matrix& m, std::size_t start, std::size_t n) {
  Matrix out(m.rows(), n);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = m.at(r, start + c);
  }
  return out;
}

void append_row(Matrix& m, const Matrix& row, std::size_t e) {
  Matrix grown(m.rows() + 1, e);
  for (std::size_t i = 0; i < m.size(); ++i) grown[i] = m[i];
  for (std::size_t c = 0; c < e; ++c) grown.at(m.rows(), c) = row.at(0, c);
  m = std::move(grown);
}

struct BlockCache {
  Matrix self_k;  // grows one row per consumed token
  Matrix self_v;
  Matrix cross_k;  // fixed: memory projections, computed once
  Matrix cross_v;
};

// Attention of a single query row over cached keys/values, head by head;
// mirrors the training graph's per-head computation exactly.
Matrix attend_cached(const Matrix& q, const Matrix& keys, const Matrix& values, const Matrix& wo,
                     std::size_t heads) {
  const std::size_t e = q.cols();
  const std::size_t dk = e / heads;
  const double scale = std::sqrt(static_cast<double>(dk));
  Matrix merged(1, e);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = cols(q, h * dk, dk);
    const Matrix kh = cols(keys, h * dk, dk);
    const Matrix vh = cols(values, h * dk, dk);
    const Matrix attn = row_softmax(matmul(qh, transpose(kh)), scale);
    const Matrix out = matmul(attn, vh);
    for (std::size_t c = 0; c < dk; ++c) merged.at(0, h * dk + c) = out.at(0, c);
  }
  return matmul(merged, wo);
}

struct DecoderState {
  std::vector<BlockCache> blocks;
  std::size_t pos = 0;  // index of the next consumed token
};

DecoderState init_state(const ParamStore& store, const Matrix& memory, const ModelConfig& cfg) {
  if (memory.cols() != cfg.e) {
    throw DimensionError("decode memory " + memory.shape_str() + ", want cols " +
                         std::to_string(cfg.e));
  }
  DecoderState state;
  state.blocks.resize(cfg.dec_blocks);
  for (std::size_t b = 0; b < cfg.dec_blocks; ++b) {
    const std::string prefix = "gen/blk" + std::to_string(b);
    state.blocks[b].cross_k = matmul(memory, store.get(prefix + "/cross/wk"));
    state.blocks[b].cross_v = matmul(memory, store.get(prefix + "/cross/wv"));
    state.blocks[b].self_k = Matrix(0, cfg.e);
    state.blocks[b].self_v = Matrix(0, cfg.e);
  }
  return state;
}

// Consumes one token, returns the next-token logits (1 x |V|).
Matrix step_token(const ParamStore& store, DecoderState& state, std::size_t token,
                  const ModelConfig& cfg) {
  if (state.pos >= cfg.max_len) throw InvariantError("decode stepped past max_len");
  Matrix x = add(store.get("gen/tok").row(token), store.get("gen/pos").row(state.pos));
  for (std::size_t b = 0; b < cfg.dec_blocks; ++b) {
    const std::string prefix = "gen/blk" + std::to_string(b);
    BlockCache& cache = state.blocks[b];

    const Matrix n1 =
        layer_norm(x, store.get(prefix + "/ln1/g"), store.get(prefix + "/ln1/b"));
    append_row(cache.self_k, matmul(n1, store.get(prefix + "/self/wk")), cfg.e);
    append_row(cache.self_v, matmul(n1, store.get(prefix + "/self/wv")), cfg.e);
    const Matrix q_self = matmul(n1, store.get(prefix + "/self/wq"));
    x = add(x, attend_cached(q_self, cache.self_k, cache.self_v,
                             store.get(prefix + "/self/wo"), cfg.heads));

    const Matrix n2 =
        layer_norm(x, store.get(prefix + "/ln2/g"), store.get(prefix + "/ln2/b"));
    const Matrix q_cross = matmul(n2, store.get(prefix + "/cross/wq"));
    x = add(x, attend_cached(q_cross, cache.cross_k, cache.cross_v,
                             store.get(prefix + "/cross/wo"), cfg.heads));

    const Matrix n3 =
        layer_norm(x, store.get(prefix + "/ln3/g"), store.get(prefix + "/ln3/b"));
    const Matrix h1 = gelu(add_row_broadcast(matmul(n3, store.get(prefix + "/ffn/w1")),
                                             store.get(prefix + "/ffn/b1")));
    x = add(x, add_row_broadcast(matmul(h1, store.get(prefix + "/ffn/w2")),
                                 store.get(prefix + "/ffn/b2")));
  }
  state.pos += 1;
  x = layer_norm(x, store.get("gen/ln_f/g"), store.get("gen/ln_f/b"));
  return add_row_broadcast(matmul(x, store.get("gen/out/w")), store.get("gen/out/b"));
}

std::size_t argmax_lowest_id(const Matrix& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.cols(); ++i) {
    if (logits.at(0, i) > logits.at(0, best)) best = i;
  }
  return best;
}

}  // namespace

DecodeResult decode_greedy(const ParamStore& store, const Matrix& memory, const ModelConfig& cfg,
                           std::size_t max_len) {
  if (max_len < 2) throw UsageError("decode needs max_len >= 2");
  max_len = std::min(max_len, cfg.max_len);
  DecoderState state = init_state(store, memory, cfg);
  DecodeResult result;
  result.ids.push_back(Vocabulary::kBos);
  double logp = 0.0;
  while (result.ids.size() < max_len) {
    Matrix logits = step_token(store, state, result.ids.back(), cfg);
    std::size_t next = argmax_lowest_id(logits);
    logp += row_log_softmax(logits, 1.0).at(0, next);
    result.ids.push_back(next);
    if (next == Vocabulary::kEos) break;
  }
  result.truncated = result.ids.back() != Vocabulary::kEos;
  result.score = logp / static_cast<double>(result.ids.size() - 1);
  return result;
}

DecodeResult decode_beam(const ParamStore& store, const Matrix& memory, const ModelConfig& cfg,
                         std::size_t max_len, std::size_t width) {
  if (width < 1) throw UsageError("beam width must be >= 1");
  if (max_len < 2) throw UsageError("decode needs max_len >= 2");
  max_len = std::min(max_len, cfg.max_len);

  struct Beam {
    std::vector<std::size_t> ids;
    double logp = 0.0;
    DecoderState state;
  };
  auto normalized = [](const Beam& b) {
    return b.logp / static_cast<double>(b.ids.size() - 1);
  };

  std::vector<Beam> live;
  {
    Beam root;
    root.ids.push_back(Vocabulary::kBos);
    root.state = init_state(store, memory, cfg);
    live.push_back(std::move(root));
  }
  std::vector<Beam> finished;

  while (!live.empty() && live.front().ids.size() < max_len) {
    // candidate = (new logp, token id, source beam)
    struct Cand {
      double logp;
      std::size_t token;
      std::size_t beam;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const Matrix lp =
          row_log_softmax(step_token(store, live[b].state, live[b].ids.back(), cfg), 1.0);
      for (std::size_t t = 0; t < lp.cols(); ++t) {
        cands.push_back({live[b].logp + lp.at(0, t), t, b});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.token != b.token) return a.token < b.token;
      return a.beam < b.beam;
    });

    // the top `width` candidates survive; ones ending the sequence retire
    std::vector<Beam> next_live;
    for (std::size_t c = 0; c < cands.size() && c < width; ++c) {
      const Cand& cand = cands[c];
      Beam grown;
      grown.ids = live[cand.beam].ids;
      grown.ids.push_back(cand.token);
      grown.logp = cand.logp;
      if (cand.token == Vocabulary::kEos) {
        finished.push_back(std::move(grown));
      } else {
        grown.state = live[cand.beam].state;  // copy: branches diverge here
        next_live.push_back(std::move(grown));
      }
    }
    live = std::move(next_live);
    if (finished.size() >= width) break;
  }

  const Beam* best = nullptr;
  bool truncated = false;
  for (const Beam& b : finished) {
    if (!best || normalized(b) > normalized(*best)) best = &b;
  }
  if (!best) {
    truncated = true;
    for (const Beam& b : live) {
      if (!best || normalized(b) > normalized(*best)) best = &b;
    }
  }
  if (!best) throw InvariantError("beam search produced no candidates");

  DecodeResult result;
  result.ids = best->ids;
  result.truncated = truncated;
  result.score = normalized(*best);
  return result;
}

}  // namespace dart
