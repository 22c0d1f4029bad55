#include "dart/encoders.hpp"

#include <cmath>

#include "dart/error.hpp"
#include "dart/log.hpp"
#include "dart/tokenizer.hpp"

namespace dart {

namespace {

}

void init_attention(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                    Rng& rng) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
        store.create_normal(prefix + "/" + w, cfg.e, cfg.e, rng, kInitStddev);
    }
}

void init_block(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    init_attention(store, prefix + "/attn", cfg, rng);
    store.create(prefix + "/ln1/g", 1, cfg.e, 1.0);
    store.create(prefix + "/ln1/b", 1, cfg.e, 0.0);
    store.create(prefix + "/ln2/g", 1, cfg.e, 1.0);
    store.create(prefix + "/ln2/b", 1, cfg.e, 0.0);
    store.create_normal(prefix + "/ffn/w1", cfg.e, cfg.ffn_hidden(), rng, kInitStddev);
    store.create(prefix + "/ffn/b1", 1, cfg.ffn_hidden(), 0.0);
    store.create_normal(prefix + "/ffn/w2", cfg.ffn_hidden(), cfg.e, rng, kInitStddev);
    store.create(prefix + "/ffn/b2", 1, cfg.e, 0.0);
}

void init_image_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    store.create_normal("img/patch_proj/w", cfg.patch_pixels(), cfg.e, rng, kInitStddev);
    store.create("img/patch_proj/b", 1, cfg.e, 0.0);
    store.create_normal("img/pos", cfg.patches_per_view(), cfg.e, rng, kInitStddev);
    store.create_normal("img/view", 2, cfg.e, rng, kInitStddev);
    store.create_normal("img/slots", cfg.d, cfg.e, rng, kInitStddev);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        init_block(store, "img/blk" + std::to_string(b), cfg, rng);
    }
}

void init_text_encoder(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    if (cfg.vocab_size < 4) throw InvariantError("text encoder: vocabulary not set");
    store.create_normal("txt/tok", cfg.vocab_size, cfg.e, rng, kInitStddev);
    store.create_normal("txt/pos", cfg.max_len, cfg.e, rng, kInitStddev);
    store.create_normal("txt/slots", cfg.d, cfg.e, rng, kInitStddev);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        init_block(store, "txt/blk" + std::to_string(b), cfg, rng);
    }
}

Var multi_head_attention(Tape& tape, Var q_src, Var kv_src, Var wq, Var wk, Var wv, Var wo,
                         std::size_t heads, const Matrix* mask) {
    const std::size_t e = tape.value(wq).cols();
    if (heads == 0 || e % heads != 0) throw InvariantError("attention: heads must divide e");
    const std::size_t dk = e / heads;
    const double scale = std::sqrt(static_cast<double>(dk));
    const Var q = tape.matmul(q_src, wq);
    const Var k = tape.matmul(kv_src, wk);
    const Var v = tape.matmul(kv_src, wv);
    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = tape.slice_cols(q, h * dk, dk);
        const Var kh = tape.slice_cols(k, h * dk, dk);
        const Var vh = tape.slice_cols(v, h * dk, dk);
        Var scores = tape.matmul(qh, tape.transpose(kh));
        if (mask) scores = tape.add_const(scores, *mask);
        const Var attn = tape.row_softmax(scores, scale);
        head_outs.push_back(tape.matmul(attn, vh));
    }
    return tape.matmul(tape.concat_cols(head_outs), wo);
}

Var encoder_block(Tape& tape, const ParamVars& params, const std::string& prefix, Var x,
                  std::size_t heads) {
    const Var normed1 = tape.layer_norm(x, params[prefix + "/ln1/g"], params[prefix + "/ln1/b"]);
    const Var attn = multi_head_attention(tape, normed1, normed1, params[prefix + "/attn/wq"],
                                          params[prefix + "/attn/wk"], params[prefix + "/attn/wv"],
                                          params[prefix + "/attn/wo"], heads);
    x = tape.add(x, attn);
    const Var normed2 = tape.layer_norm(x, params[prefix + "/ln2/g"], params[prefix + "/ln2/b"]);
    const Var h1 = tape.gelu(
        tape.add_row_broadcast(tape.matmul(normed2, params[prefix + "/ffn/w1"]),
                               params[prefix + "/ffn/b1"]));
    const Var h2 = tape.add_row_broadcast(tape.matmul(h1, params[prefix + "/ffn/w2"]),
                                          params[prefix + "/ffn/b2"]);
    return tape.add(x, h2);
}

Var slot_pool(Tape& tape, Var slots, Var tokens, double e_width) {
    const Var scores = tape.matmul(slots, tape.transpose(tokens));
    const Var attn = tape.row_softmax(scores, std::sqrt(e_width));
    return tape.add(slots, tape.matmul(attn, tokens));
}

Matrix patch_rows(const Matrix& view, std::size_t patch) {
    if (view.rows() % patch != 0 || view.cols() % patch != 0) {
        throw DimensionError("patch_rows: patch " + std::to_string(patch) +
                             " does not divide view " + view.shape_str());
    }
    const std::size_t gr = view.rows() / patch;
    const std::size_t gc = view.cols() / patch;
    Matrix out(gr * gc, patch * patch);
    for (std::size_t pr = 0; pr < gr; ++pr) {
        for (std::size_t pc = 0; pc < gc; ++pc) {
            const std::size_t row = pr * gc + pc;
            for (std::size_t r = 0; r < patch; ++r) {
                for (std::size_t c = 0; c < patch; ++c) {
                    out.at(row, r * patch + c) = view.at(pr * patch + r, pc * patch + c);
                }
            }
        }
    }
    return out;
}

Var encode_image_tape(Tape& tape, const ParamVars& params, const std::vector<Matrix>& views,
                      const ModelConfig& cfg) {
    if (views.empty() || views.size() > 2) {
        throw DimensionError("encode_image: need 1 or 2 views");
    }
    std::vector<Var> view_tokens;
    for (std::size_t v = 0; v < views.size(); ++v) {
        if (views[v].rows() != cfg.img_h || views[v].cols() != cfg.img_w) {
            throw DimensionError("encode_image: view is " + views[v].shape_str() +
                                 ", config expects " + std::to_string(cfg.img_h) + "x" +
                                 std::to_string(cfg.img_w));
        }
        const Var patches = tape.constant(patch_rows(views[v], cfg.patch));
        Var tok = tape.add_row_broadcast(tape.matmul(patches, params["img/patch_proj/w"]),
                                         params["img/patch_proj/b"]);
        // Within-view patch position, then which-view embedding. Both
        // views share the position table, so swapping views with equal
        // view-embedding rows permutes tokens without changing them.
        tok = tape.add(tok, params["img/pos"]);
        const Var view_row = tape.slice_rows(params["img/view"], v, 1);
        tok = tape.add_row_broadcast(tok, view_row);
        view_tokens.push_back(tok);
    }
    Var tokens =
        view_tokens.size() == 1 ? view_tokens[0] : tape.concat_rows(view_tokens);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        tokens = encoder_block(tape, params, "img/blk" + std::to_string(b), tokens, cfg.heads);
    }
    return slot_pool(tape, params["img/slots"], tokens, static_cast<double>(cfg.e));
}

Matrix encode_image(const ParamStore& store, const std::vector<Matrix>& views,
                    const ModelConfig& cfg) {
    Tape tape;
    const ParamVars params(tape, store, /*all_constant=*/true);
    return tape.value(encode_image_tape(tape, params, views, cfg));
}

Var encode_text_tape(Tape& tape, const ParamVars& params, const std::vector<std::size_t>& ids,
                     const ModelConfig& cfg) {
    if (ids.empty()) throw DimensionError("encode_text: empty sequence");
    std::vector<std::size_t> use = ids;
    if (use.size() > cfg.max_len) {
        log_info("encode_text: truncating sequence of length " + std::to_string(use.size()) +
                 " to max_len " + std::to_string(cfg.max_len));
        use.resize(cfg.max_len);
        use.back() = Vocabulary::kEos;
    }
    Var tok = tape.gather_rows(params["txt/tok"], use);
    tok = tape.add(tok, tape.slice_rows(params["txt/pos"], 0, use.size()));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        tok = encoder_block(tape, params, "txt/blk" + std::to_string(b), tok, cfg.heads);
    }
    return slot_pool(tape, params["txt/slots"], tok, static_cast<double>(cfg.e));
}

Matrix encode_text(const ParamStore& store, const std::vector<std::size_t>& ids,
                   const ModelConfig& cfg) {
    Tape tape;
    const ParamVars params(tape, store, /*all_constant=*/true);
    return tape.value(encode_text_tape(tape, params, ids, cfg));
}

}  // namespace dart
