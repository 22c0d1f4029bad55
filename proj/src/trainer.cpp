#include "dart/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <utility>

#include "dart/bytes.hpp"
#include "dart/disease.hpp"
#include "dart/encoders.hpp"
#include "dart/error.hpp"
#include "dart/generator.hpp"
#include "dart/log.hpp"
#include "dart/metrics.hpp"
#include "dart/parallel.hpp"
#include "dart/rng.hpp"
#include "dart/selfcorrect.hpp"
#include "json.hpp"

namespace dart {

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'A', 'R', 'T', 'C', 'K', 'P', 'T'};

void require_nonneg(double v, const char* name) {
    if (!(v >= 0.0)) throw UsageError(std::string("train: ") + name + " must be >= 0");
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    require_nonneg(lambda_cls, "lambda_cls");
    require_nonneg(lambda_gen, "lambda_gen");
    require_nonneg(lambda_m, "lambda_m");
    require_nonneg(lambda_cor, "lambda_cor");
    require_nonneg(weight_decay, "weight_decay");
    if (!(lr > 0.0)) throw UsageError("train: lr must be > 0");
    if (!(clip_norm > 0.0)) throw UsageError("train: clip_norm must be > 0");
    if (batch == 0) throw UsageError("train: batch must be >= 1");
    if (stage1_epochs == 0 || stage2_epochs == 0) {
        throw UsageError("train: epoch counts must be >= 1");
    }
    if (model.k > model.queue_capacity) {
        throw UsageError("train: k (" + std::to_string(model.k) +
                         ") cannot exceed queue capacity (" +
                         std::to_string(model.queue_capacity) + ")");
    }
    if (use_dm && !use_i2t) {
        throw UsageError(
            "train: the disease-matching term needs retrieval enabled (no hits to match "
            "without it)");
    }
    if (use_i2t && model.k == 0) {
        throw UsageError("train: retrieval is enabled but k is 0");
    }
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig t;
    t.model = ModelConfig::from_config(cfg);
    t.lambda_cls = cfg.get_double_or("train.lambda_cls", 1.0);
    t.lambda_gen = cfg.get_double_or("train.lambda_gen", 1.0);
    t.lambda_m = cfg.get_double_or("train.lambda_m", 10.0);
    t.lambda_cor = cfg.get_double_or("train.lambda_cor", 5.0);
    t.batch = static_cast<std::size_t>(cfg.get_int_or("train.batch", 8));
    t.lr = cfg.get_double_or("train.lr", 3e-4);
    t.weight_decay = cfg.get_double_or("train.weight_decay", 0.01);
    t.clip_norm = cfg.get_double_or("train.clip_norm", 5.0);
    t.stage1_epochs = static_cast<std::size_t>(cfg.get_int_or("train.stage1_epochs", 30));
    t.stage2_epochs = static_cast<std::size_t>(cfg.get_int_or("train.stage2_epochs", 10));
    t.seed = static_cast<std::uint64_t>(cfg.get_int_or("train.seed", 7));
    t.use_cl = cfg.get_bool_or("train.cl", true);
    t.use_i2t = cfg.get_bool_or("train.i2t", true);
    t.use_dm = cfg.get_bool_or("train.dm", true);
    t.use_sc = cfg.get_bool_or("train.sc", true);
    t.gamma_exact = cfg.get_bool_or("train.gamma_exact", false);
    t.online_decode = cfg.get_bool_or("train.online_decode", false);
    t.corr_residual = cfg.get_bool_or("train.corr_residual", false);
    t.threads = static_cast<std::size_t>(cfg.get_int_or("train.threads", 1));
    if (t.threads == 0) t.threads = 1;
    t.validate();
    return t;
}

void TrainConfig::write_to(Config& cfg) const {
    model.write_to(cfg);
    cfg.set_double("train.lambda_cls", lambda_cls);
    cfg.set_double("train.lambda_gen", lambda_gen);
    cfg.set_double("train.lambda_m", lambda_m);
    cfg.set_double("train.lambda_cor", lambda_cor);
    cfg.set_int("train.batch", static_cast<std::int64_t>(batch));
    cfg.set_double("train.lr", lr);
    cfg.set_double("train.weight_decay", weight_decay);
    cfg.set_double("train.clip_norm", clip_norm);
    cfg.set_int("train.stage1_epochs", static_cast<std::int64_t>(stage1_epochs));
    cfg.set_int("train.stage2_epochs", static_cast<std::int64_t>(stage2_epochs));
    cfg.set_int("train.seed", static_cast<std::int64_t>(seed));
    cfg.set_bool("train.cl", use_cl);
    cfg.set_bool("train.i2t", use_i2t);
    cfg.set_bool("train.dm", use_dm);
    cfg.set_bool("train.sc", use_sc);
    cfg.set_bool("train.gamma_exact", gamma_exact);
    cfg.set_bool("train.online_decode", online_decode);
    cfg.set_bool("train.corr_residual", corr_residual);
    // threads intentionally not serialized: runtime knob, not a result
    // of training.
}

Config TrainConfig::to_config() const {
    Config cfg;
    write_to(cfg);
    return cfg;
}

std::map<std::string, bool> TrainConfig::known_keys() {
    TrainConfig defaults;
    Config cfg;
    defaults.write_to(cfg);
    std::map<std::string, bool> keys;
    for (const auto& [key, value] : cfg.entries()) keys[key] = true;
    keys["train.threads"] = true;
    return keys;
}

void apply_ablation_setting(TrainConfig& cfg, const std::string& setting) {
    cfg.use_cl = false;
    cfg.use_i2t = false;
    cfg.use_dm = false;
    cfg.use_sc = false;
    if (setting == "base") return;
    cfg.use_cl = true;
    if (setting == "a") return;
    cfg.use_i2t = true;
    if (setting == "b") return;
    cfg.use_dm = true;
    if (setting == "c") return;
    cfg.use_sc = true;
    if (setting == "d") return;
    throw UsageError("unknown ablation setting \"" + setting +
                     "\" (expected base, a, b, c, or d)");
}

double optimizer_step(ParamStore& params, GradMap& grads, AdamW& opt, const TrainConfig& cfg) {
    for (const auto& [name, grad] : grads) {
        if (!grad.all_finite()) {
            throw InvariantError("step aborted: non-finite gradient in parameter group \"" +
                                 name + "\"");
        }
    }
    const double norm = clip_global_norm(grads, cfg.clip_norm);
    opt.step(params, grads);
    if (params.has("align/tau")) clamp_tau(params);
    return norm;
}

namespace {

std::size_t candidates_excluding(const std::vector<QueueEntry>& entries,
                                 const std::string& record_id) {
    std::size_t n = 0;
    for (const QueueEntry& entry : entries) {
        if (entry.record_id != record_id) ++n;
    }
    return n;
}

// Plain-value twin of the differentiable surrogate, for logging.
double surrogate_value(const Matrix& f_i, const std::vector<RetrievalHit>& hits, const Matrix& y,
                       double tau_value) {
    Matrix sims(1, hits.size());
    Matrix ce(1, hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        sims.at(0, i) = cosine_similarity(f_i, hits[i].text_features);
        ce.at(0, i) = cross_entropy_rows(y, hits[i].annotation);
    }
    const Matrix w = row_softmax(sims, tau_value);
    return dot_all(w, ce);
}

double scalar_of(const Tape& tape, Var v) { return tape.value(v).at(0, 0); }

}  // namespace

StepLog stage1_step(ParamStore& params, AdamW& opt, TrainingQueue& queue,
                    const std::vector<const CorpusRecord*>& batch, const Vocabulary& vocab,
                    const TrainConfig& cfg) {
    if (batch.empty()) throw InvariantError("stage-1 step got an empty batch");
    const ModelConfig& m = cfg.model;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const std::vector<QueueEntry> snapshot = queue.snapshot();
    const double tau_value = params.get("align/tau").at(0, 0);

    Tape tape;
    ParamVars pv(tape, params);

    std::vector<Var> image_vars;
    std::vector<Var> text_vars;
    std::vector<Var> cls_terms;
    std::vector<Var> gen_terms;
    std::vector<Var> dm_terms;
    std::vector<std::vector<std::size_t>> targets(batch.size());
    std::vector<Matrix> annotations(batch.size());
    double gamma_exact_sum = 0.0;

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const CorpusRecord& rec = *batch[i];
        targets[i] = tokenize(rec.report, vocab, m.max_len);
        annotations[i] = disease_one_hot(rec.diseases);

        Var f_i = encode_image_tape(tape, pv, rec.views, m);
        Var f_t = encode_text_tape(tape, pv, targets[i], m);
        image_vars.push_back(f_i);
        text_vars.push_back(f_t);

        Var logits = classify_logits_tape(tape, f_i, pv["cls/phi"]);
        cls_terms.push_back(classification_loss_tape(tape, logits, annotations[i], m));
        Var yhat = tape.row_softmax(logits, std::sqrt(static_cast<double>(m.e)));
        Var f_d = disease_features_tape(tape, yhat, pv["cls/phi"], f_i);

        std::vector<RetrievalHit> hits;
        std::vector<Var> retrieved;
        if (cfg.use_i2t && candidates_excluding(snapshot, rec.id) >= m.k) {
            const Matrix f_i_value = tape.value(f_i);
            hits = topk(f_i_value, snapshot, m.k, rec.id);
            retrieved.reserve(hits.size());
            for (const RetrievalHit& hit : hits) {
                retrieved.push_back(tape.constant(hit.text_features));
            }
        }

        Var memory = bundle_memory_tape(tape, pv, f_d, f_t, retrieved);
        gen_terms.push_back(generation_loss_tape(tape, pv, memory, targets[i], m));

        if (cfg.use_dm && !hits.empty()) {
            gamma_exact_sum += disease_match_gamma(annotations[i], hits);
            dm_terms.push_back(
                disease_match_surrogate_tape(tape, f_i, hits, annotations[i], tau_value));
        }
    }

    StepLog log;
    std::vector<Var> weighted;
    Var l_cls = tape.affine(tape.add_list(cls_terms), inv_b, 0.0);
    Var l_gen = tape.affine(tape.add_list(gen_terms), inv_b, 0.0);
    log.l_cls = scalar_of(tape, l_cls);
    log.l_gen = scalar_of(tape, l_gen);
    weighted.push_back(tape.affine(l_cls, cfg.lambda_cls, 0.0));
    weighted.push_back(tape.affine(l_gen, cfg.lambda_gen, 0.0));
    if (cfg.use_cl) {
        Var l_con = contrastive_loss_tape(tape, image_vars, text_vars, snapshot, pv["align/tau"]);
        log.l_con = scalar_of(tape, l_con);
        weighted.push_back(l_con);
    }
    log.gamma_exact = gamma_exact_sum * inv_b;
    if (!dm_terms.empty()) {
        Var l_dm = tape.affine(tape.add_list(dm_terms), inv_b, 0.0);
        log.gamma_surrogate = scalar_of(tape, l_dm);
        if (!cfg.gamma_exact) {
            weighted.push_back(tape.affine(l_dm, cfg.lambda_m, 0.0));
        }
    }
    Var total = tape.add_list(weighted);
    log.total = scalar_of(tape, total);

    tape.backward(total);
    GradMap grads = pv.collect_grads();
    log.grad_norm = optimizer_step(params, grads, opt, cfg);
    log.tau = params.get("align/tau").at(0, 0);

    // The step's own (pre-update) features become future candidates.
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Matrix text_features = tape.value(text_vars[i]);
        const Matrix image_features = tape.value(image_vars[i]);
        queue.push(batch[i]->id, batch[i]->report, text_features, image_features,
                   annotations[i]);
    }
    return log;
}

Stage2Item prepare_stage2_item(const ParamStore& params, const Vocabulary& vocab,
                               const TrainConfig& cfg, const FrozenIndex& index,
                               const CorpusRecord& rec) {
    const ModelConfig& m = cfg.model;
    Stage2Item item;
    item.record = &rec;
    item.f_i = encode_image(params, rec.views, m);
    const Matrix& phi = params.get("cls/phi");
    const Matrix yhat = classify(item.f_i, phi, m);
    item.f_d = disease_features(yhat, phi, item.f_i);
    item.y = disease_one_hot(rec.diseases);
    item.target = tokenize(rec.report, vocab, m.max_len);

    std::vector<Matrix> retrieved;
    if (cfg.use_i2t) {
        item.hits = topk(item.f_i, index.entries(), m.k, rec.id);
        retrieved.reserve(item.hits.size());
        for (const RetrievalHit& hit : item.hits) retrieved.push_back(hit.text_features);
    }

    // Stage-1 decode of this record, then the frozen text encoder over the
    // generated ids (re-tokenizing the detokenized text gives the same ids).
    const ConditioningBundle bundle =
        build_bundle(params, item.f_d, params.get("gen/null_text"), retrieved);
    const DecodeResult decoded = decode_greedy(params, bundle.memory, m, m.max_len);
    item.f_generated = encode_text(params, decoded.ids, m);
    return item;
}

StepLog stage2_step(ParamStore& params, AdamW& opt, const Stage2Item& item,
                    const TrainConfig& cfg) {
    const ModelConfig& m = cfg.model;
    Tape tape;
    ParamVars pv(tape, params);

    Var f_star = correct_tape(tape, tape.constant(item.f_generated), pv["cor/psi"], m,
                              cfg.corr_residual);
    std::vector<Var> retrieved;
    retrieved.reserve(item.hits.size());
    for (const RetrievalHit& hit : item.hits) retrieved.push_back(tape.constant(hit.text_features));
    Var memory = bundle_memory_tape(tape, pv, tape.constant(item.f_d), f_star, retrieved);

    Var l_gen = generation_loss_tape(tape, pv, memory, item.target, m);
    Var l_cor = correction_loss_tape(tape, f_star, item.f_i);
    Var total = tape.add(l_gen, tape.affine(l_cor, cfg.lambda_cor, 0.0));

    StepLog log;
    log.l_gen = scalar_of(tape, l_gen);
    log.l_cor = scalar_of(tape, l_cor);
    log.total = scalar_of(tape, total);
    if (!item.hits.empty()) {
        const double tau_value = params.get("align/tau").at(0, 0);
        log.gamma_exact = disease_match_gamma(item.y, item.hits);
        log.gamma_surrogate = surrogate_value(item.f_i, item.hits, item.y, tau_value);
    }

    tape.backward(total);
    GradMap grads = pv.collect_grads();
    for (const auto& [name, grad] : grads) {
        if (name.rfind("cor/", 0) != 0) {
            throw InvariantError("stage-2 gradient reached frozen parameter group \"" + name +
                                 "\"");
        }
    }
    log.grad_norm = optimizer_step(params, grads, opt, cfg);
    log.tau = params.get("align/tau").at(0, 0);
    return log;
}

namespace {

std::string serialize_grad_map(const GradMap& grads) {
    std::string out;
    append_u64_le(out, grads.size());
    for (const auto& [name, value] : grads) {
        append_str(out, name);
        append_u64_le(out, value.rows());
        append_u64_le(out, value.cols());
        append_matrix(out, value);
    }
    return out;
}

GradMap read_grad_map(ByteReader& r) {
    GradMap grads;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const std::size_t rows = r.u64();
        const std::size_t cols = r.u64();
        grads[name] = r.matrix(rows, cols);
    }
    return grads;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    append_u64_le(out, Checkpoint::kVersion);
    append_u64_le(out, ckpt.stage);
    append_str(out, ckpt.config.to_config().serialize());
    append_str(out, ckpt.vocab_text);

    append_u64_le(out, ckpt.params.count());
    for (const auto& [name, value] : ckpt.params.all()) {
        append_str(out, name);
        append_u64_le(out, value.rows());
        append_u64_le(out, value.cols());
        append_u64_le(out, ckpt.params.trainable(name) ? 1 : 0);
        append_matrix(out, value);
    }

    append_u64_le(out, static_cast<std::uint64_t>(ckpt.opt_t));
    out += serialize_grad_map(ckpt.opt_m);
    out += serialize_grad_map(ckpt.opt_v);

    append_u64_le(out, ckpt.has_queue ? 1 : 0);
    if (ckpt.has_queue) {
        const std::size_t d = ckpt.config.model.d;
        const std::size_t e = ckpt.config.model.e;
        append_u64_le(out, ckpt.queue_entries.size());
        for (const QueueEntry& entry : ckpt.queue_entries) {
            if (entry.text_features.rows() != d || entry.text_features.cols() != e ||
                entry.image_features.rows() != d || entry.image_features.cols() != e) {
                throw InvariantError("queue entry " + entry.record_id +
                                     " has features of the wrong shape for this checkpoint");
            }
            append_u64_le(out, entry.entry_id);
            append_str(out, entry.record_id);
            append_str(out, entry.report);
            append_matrix(out, entry.text_features);
            append_matrix(out, entry.image_features);
            append_matrix(out, entry.annotation);
        }
        append_u64_le(out, ckpt.queue_next_id);
    }
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string payload = serialize_checkpoint(ckpt);
    append_u64_le(payload, fnv1a64(payload));
    write_file_atomic(path, payload);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_file_bytes(path, "checkpoint");
    if (buf.size() < sizeof(kCheckpointMagic) + 8) {
        throw DataError("checkpoint " + path + " too short");
    }
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw DataError("checkpoint " + path + " has wrong magic");
    }
    const std::string payload = buf.substr(0, buf.size() - 8);
    ByteReader trailer(buf, buf.size() - 8, "checkpoint");
    if (fnv1a64(payload) != trailer.u64()) {
        throw DataError("checkpoint " + path + " failed its content-hash check");
    }

    ByteReader r(payload, sizeof(kCheckpointMagic), "checkpoint");
    const std::uint64_t version = r.u64();
    if (version != Checkpoint::kVersion) {
        throw DataError("checkpoint " + path + " has unsupported version " +
                        std::to_string(version) + " (this build reads version " +
                        std::to_string(Checkpoint::kVersion) + ")");
    }
    Checkpoint ckpt;
    ckpt.stage = r.u64();
    if (ckpt.stage != 1 && ckpt.stage != 2) {
        throw DataError("checkpoint " + path + " has invalid stage tag " +
                        std::to_string(ckpt.stage));
    }
    ckpt.config = TrainConfig::from_config(Config::parse(r.str()));
    ckpt.vocab_text = r.str();

    const std::uint64_t param_count = r.u64();
    for (std::uint64_t i = 0; i < param_count; ++i) {
        const std::string name = r.str();
        const std::size_t rows = r.u64();
        const std::size_t cols = r.u64();
        const bool trainable = r.u64() != 0;
        ckpt.params.set(name, r.matrix(rows, cols));
        ckpt.params.set_trainable(name, trainable);
    }

    ckpt.opt_t = static_cast<std::int64_t>(r.u64());
    ckpt.opt_m = read_grad_map(r);
    ckpt.opt_v = read_grad_map(r);

    ckpt.has_queue = r.u64() != 0;
    if (ckpt.has_queue) {
        const std::size_t d = ckpt.config.model.d;
        const std::size_t e = ckpt.config.model.e;
        const std::uint64_t count = r.u64();
        ckpt.queue_entries.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            QueueEntry entry;
            entry.entry_id = r.u64();
            entry.record_id = r.str();
            entry.report = r.str();
            entry.text_features = r.matrix(d, e);
            entry.image_features = r.matrix(d, e);
            entry.annotation = r.matrix(d, 2);
            ckpt.queue_entries.push_back(std::move(entry));
        }
        ckpt.queue_next_id = r.u64();
    }
    if (r.pos() != payload.size()) {
        throw DataError("checkpoint " + path + " has trailing bytes");
    }
    return ckpt;
}

CorpusSplits split_corpus(std::vector<CorpusRecord> records) {
    CorpusSplits splits;
    for (CorpusRecord& rec : records) {
        switch (hash_split(rec.id)) {
            case Split::kTrain: splits.train.push_back(std::move(rec)); break;
            case Split::kVal: splits.val.push_back(std::move(rec)); break;
            case Split::kTest: splits.test.push_back(std::move(rec)); break;
        }
    }
    return splits;
}

FrozenIndex build_index_from_corpus(const ParamStore& params, const Vocabulary& vocab,
                                    const ModelConfig& cfg,
                                    const std::vector<CorpusRecord>& records,
                                    std::size_t threads) {
    if (records.empty()) throw DataError("index building needs at least one record");
    std::vector<QueueEntry> entries(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const CorpusRecord& rec = records[i];
        QueueEntry& entry = entries[i];
        entry.entry_id = i;
        entry.record_id = rec.id;
        entry.report = rec.report;
        entry.text_features = encode_text(params, tokenize(rec.report, vocab, cfg.max_len), cfg);
        entry.annotation = disease_one_hot(rec.diseases);
    });
    return FrozenIndex::build(std::move(entries), cfg.d, cfg.e);
}

namespace {

// Shared first-stage conditioning state: disease-relevant features plus
// the retrieved blocks. Both decode passes reuse it.
struct InferenceState {
    Matrix f_d;
    std::vector<RetrievalHit> hits;
    std::vector<Matrix> retrieved;
};

InferenceState inference_state(const ParamStore& params, const ModelConfig& cfg,
                               const FrozenIndex* index, std::size_t k,
                               const CorpusRecord& rec, const Matrix& f_i) {
    InferenceState state;
    const Matrix& phi = params.get("cls/phi");
    const Matrix yhat = classify(f_i, phi, cfg);
    state.f_d = disease_features(yhat, phi, f_i);
    if (k > 0) {
        if (index == nullptr) {
            throw UsageError("retrieval with k=" + std::to_string(k) + " needs a frozen index");
        }
        state.hits = topk(f_i, index->entries(), k, rec.id);
        state.retrieved.reserve(state.hits.size());
        for (const RetrievalHit& hit : state.hits) state.retrieved.push_back(hit.text_features);
    }
    return state;
}

GeneratedReport report_from(const DecodeResult& decoded, const Vocabulary& vocab,
                            const InferenceState& state) {
    GeneratedReport out;
    out.ids = decoded.ids;
    out.truncated = decoded.truncated;
    out.report = detokenize(decoded.ids, vocab);
    for (const RetrievalHit& hit : state.hits) {
        out.retrieved_entry_ids.push_back(hit.entry_id);
        out.retrieved_record_ids.push_back(hit.record_id);
    }
    return out;
}

}  // namespace

GeneratedReport stage1_generate(const ParamStore& params, const Vocabulary& vocab,
                                const ModelConfig& cfg, const FrozenIndex* index, std::size_t k,
                                const CorpusRecord& rec) {
    const Matrix f_i = encode_image(params, rec.views, cfg);
    const InferenceState state = inference_state(params, cfg, index, k, rec, f_i);
    const ConditioningBundle bundle =
        build_bundle(params, state.f_d, params.get("gen/null_text"), state.retrieved);
    return report_from(decode_greedy(params, bundle.memory, cfg, cfg.max_len), vocab, state);
}

GenerationOutput generate_for_record(const ParamStore& params, const Vocabulary& vocab,
                                     const ModelConfig& cfg, const FrozenIndex* index,
                                     std::size_t k, const CorpusRecord& rec, bool stage2_pass,
                                     bool corr_residual) {
    GenerationOutput out;
    const Matrix f_i = encode_image(params, rec.views, cfg);
    const InferenceState state = inference_state(params, cfg, index, k, rec, f_i);
    const ConditioningBundle first_bundle =
        build_bundle(params, state.f_d, params.get("gen/null_text"), state.retrieved);
    const DecodeResult first = decode_greedy(params, first_bundle.memory, cfg, cfg.max_len);
    out.stage1 = report_from(first, vocab, state);

    if (!stage2_pass) return out;
    if (!params.has("cor/psi")) {
        throw UsageError("stage-2 generation needs the correction embedding (stage-2 checkpoint)");
    }
    const Matrix f_generated = encode_text(params, first.ids, cfg);
    const Matrix f_star = correct(f_generated, params.get("cor/psi"), cfg, corr_residual);
    const ConditioningBundle second_bundle =
        build_bundle(params, state.f_d, f_star, state.retrieved);
    out.stage2 = report_from(decode_greedy(params, second_bundle.memory, cfg, cfg.max_len), vocab,
                             state);
    out.has_stage2 = true;
    return out;
}

std::vector<int> classify_record(const ParamStore& params, const ModelConfig& cfg,
                                 const CorpusRecord& rec) {
    const Matrix f_i = encode_image(params, rec.views, cfg);
    return predicted_diseases(classify(f_i, params.get("cls/phi"), cfg));
}

double validation_bleu4(const ParamStore& params, const Vocabulary& vocab,
                        const ModelConfig& cfg, const FrozenIndex* index, std::size_t k,
                        const std::vector<CorpusRecord>& records, bool stage2_pass,
                        bool corr_residual, std::size_t threads) {
    if (records.empty()) throw DataError("validation needs at least one record");
    std::vector<TokenSeq> cands(records.size());
    std::vector<TokenSeq> refs(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const GenerationOutput out = generate_for_record(params, vocab, cfg, index, k,
                                                         records[i], stage2_pass, corr_residual);
        const GeneratedReport& gen = stage2_pass ? out.stage2 : out.stage1;
        cands[i] = split_tokens(gen.report);
        refs[i] = split_tokens(records[i].report);
    });
    return bleu(cands, refs, 4);
}

namespace {

nlohmann::json step_json(std::uint64_t stage, std::size_t epoch, std::size_t step,
                         const StepLog& log) {
    return nlohmann::json{{"stage", stage},
                          {"epoch", epoch},
                          {"step", step},
                          {"total", log.total},
                          {"l_con", log.l_con},
                          {"l_cls", log.l_cls},
                          {"l_gen", log.l_gen},
                          {"l_cor", log.l_cor},
                          {"gamma", log.gamma_exact},
                          {"gamma_surrogate", log.gamma_surrogate},
                          {"grad_norm", log.grad_norm},
                          {"tau", log.tau}};
}

void log_validation(std::ostream* metrics_log, std::uint64_t stage, std::size_t epoch,
                    double bleu4, bool best) {
    if (metrics_log == nullptr) return;
    *metrics_log << nlohmann::json{{"stage", stage},
                                   {"epoch", epoch},
                                   {"event", "validation"},
                                   {"bleu4", bleu4},
                                   {"best", best}}
                        .dump()
                 << '\n';
}

Checkpoint snapshot_checkpoint(std::uint64_t stage, const TrainConfig& cfg,
                               const std::string& vocab_text, const ParamStore& params,
                               const AdamW& opt, const TrainingQueue* queue) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.config = cfg;
    ckpt.vocab_text = vocab_text;
    ckpt.params = params;
    ckpt.opt_t = opt.step_count();
    ckpt.opt_m = opt.first_moments();
    ckpt.opt_v = opt.second_moments();
    if (queue != nullptr) {
        ckpt.has_queue = true;
        ckpt.queue_entries = queue->snapshot();
        ckpt.queue_next_id = queue->next_entry_id();
    }
    return ckpt;
}

}  // namespace

Checkpoint run_stage1(const TrainConfig& cfg, const std::vector<CorpusRecord>& train,
                      const std::vector<CorpusRecord>& val, std::ostream* metrics_log) {
    cfg.validate();
    if (train.empty()) throw DataError("stage-1 training needs a non-empty train split");
    if (val.empty()) throw DataError("stage-1 training needs a non-empty validation split");

    const Vocabulary vocab = build_vocab(train);
    TrainConfig run_cfg = cfg;
    run_cfg.model.vocab_size = vocab.size();
    run_cfg.validate();
    const std::string vocab_text = vocab_to_text(vocab);

    ParamStore params;
    Rng init_rng(derive_seed(run_cfg.seed, "init"));
    init_image_encoder(params, run_cfg.model, init_rng);
    init_text_encoder(params, run_cfg.model, init_rng);
    init_disease(params, run_cfg.model, init_rng);
    init_alignment(params, run_cfg.model);
    init_generator(params, run_cfg.model, init_rng);

    AdamWConfig opt_cfg;
    opt_cfg.lr = run_cfg.lr;
    opt_cfg.weight_decay = run_cfg.weight_decay;
    AdamW opt(opt_cfg);
    TrainingQueue queue(run_cfg.model.queue_capacity);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_bleu = -1.0;
    Checkpoint best;
    const std::size_t val_k = run_cfg.use_i2t ? run_cfg.model.k : 0;
    for (std::size_t epoch = 1; epoch <= run_cfg.stage1_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(run_cfg.seed, "shuffle-stage1", epoch));
        shuffle_rng.shuffle(order);
        std::size_t step = 0;
        for (std::size_t start = 0; start < order.size(); start += run_cfg.batch) {
            const std::size_t end = std::min(order.size(), start + run_cfg.batch);
            std::vector<const CorpusRecord*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
            const StepLog log = stage1_step(params, opt, queue, batch, vocab, run_cfg);
            if (metrics_log != nullptr) {
                *metrics_log << step_json(1, epoch, step, log).dump() << '\n';
            }
            ++step;
        }

        // Validation decodes against a fresh index over the train split,
        // the same retrieval source inference will use.
        std::optional<FrozenIndex> vindex;
        if (val_k > 0) {
            vindex = build_index_from_corpus(params, vocab, run_cfg.model, train,
                                             run_cfg.threads);
        }
        const double bleu4 =
            validation_bleu4(params, vocab, run_cfg.model, vindex ? &*vindex : nullptr, val_k,
                             val, /*stage2_pass=*/false, run_cfg.corr_residual, run_cfg.threads);
        const bool is_best = bleu4 > best_bleu;
        log_validation(metrics_log, 1, epoch, bleu4, is_best);
        log_info("stage 1 epoch " + std::to_string(epoch) + ": validation BLEU-4 " +
                 format_double(bleu4));
        if (is_best) {
            best_bleu = bleu4;
            best = snapshot_checkpoint(1, run_cfg, vocab_text, params, opt, &queue);
        }
    }
    return best;
}

Checkpoint run_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                      const std::vector<CorpusRecord>& train,
                      const std::vector<CorpusRecord>& val, std::ostream* metrics_log) {
    if (stage1.stage != 1) {
        throw UsageError("stage-2 training needs a stage-1 checkpoint (got stage " +
                         std::to_string(stage1.stage) + ")");
    }
    TrainConfig run_cfg = cfg;
    run_cfg.model.vocab_size = stage1.config.model.vocab_size;
    {
        Config a;
        Config b;
        run_cfg.model.write_to(a);
        stage1.config.model.write_to(b);
        if (!(a == b)) {
            throw UsageError("stage-2 model configuration differs from the checkpoint's");
        }
    }
    run_cfg.validate();
    if (train.empty()) throw DataError("stage-2 training needs a non-empty train split");
    if (val.empty()) throw DataError("stage-2 training needs a non-empty validation split");

    const Vocabulary vocab = vocab_from_text(stage1.vocab_text);
    ParamStore params = stage1.params;
    Rng psi_rng(derive_seed(run_cfg.seed, "psi"));
    init_selfcorrect(params, run_cfg.model, psi_rng);
    stage2_freeze(params);

    const FrozenIndex index =
        build_index_from_corpus(params, vocab, run_cfg.model, train, run_cfg.threads);

    AdamWConfig opt_cfg;
    opt_cfg.lr = run_cfg.lr;
    opt_cfg.weight_decay = run_cfg.weight_decay;
    AdamW opt(opt_cfg);

    // The whole pipeline upstream of the correction module is frozen, so
    // each record's inputs are computed once and reused every epoch
    // (online_decode recomputes them per step instead).
    std::vector<Stage2Item> items(train.size());
    if (!run_cfg.online_decode) {
        parallel_for(train.size(), run_cfg.threads, [&](std::size_t i) {
            items[i] = prepare_stage2_item(params, vocab, run_cfg, index, train[i]);
        });
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_bleu = -1.0;
    Checkpoint best;
    const std::size_t val_k = run_cfg.use_i2t ? run_cfg.model.k : 0;
    for (std::size_t epoch = 1; epoch <= run_cfg.stage2_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(run_cfg.seed, "shuffle-stage2", epoch));
        shuffle_rng.shuffle(order);
        std::size_t step = 0;
        for (std::size_t idx : order) {
            StepLog log;
            if (run_cfg.online_decode) {
                const Stage2Item item =
                    prepare_stage2_item(params, vocab, run_cfg, index, train[idx]);
                log = stage2_step(params, opt, item, run_cfg);
            } else {
                log = stage2_step(params, opt, items[idx], run_cfg);
            }
            if (metrics_log != nullptr) {
                *metrics_log << step_json(2, epoch, step, log).dump() << '\n';
            }
            ++step;
        }

        const double bleu4 = validation_bleu4(params, vocab, run_cfg.model,
                                              val_k > 0 ? &index : nullptr, val_k, val,
                                              /*stage2_pass=*/true, run_cfg.corr_residual,
                                              run_cfg.threads);
        const bool is_best = bleu4 > best_bleu;
        log_validation(metrics_log, 2, epoch, bleu4, is_best);
        log_info("stage 2 epoch " + std::to_string(epoch) + ": validation BLEU-4 " +
                 format_double(bleu4));
        if (is_best) {
            best_bleu = bleu4;
            best = snapshot_checkpoint(2, run_cfg, stage1.vocab_text, params, opt, nullptr);
        }
    }
    return best;
}

std::vector<std::pair<std::size_t, double>> sweep_k(const Checkpoint& ckpt,
                                                    const FrozenIndex& index,
                                                    const std::vector<CorpusRecord>& records,
                                                    const std::vector<std::size_t>& ks) {
    if (records.empty()) throw DataError("k sweep needs at least one record");
    const Vocabulary vocab = vocab_from_text(ckpt.vocab_text);
    std::vector<std::pair<std::size_t, double>> table;
    table.reserve(ks.size());
    for (const std::size_t k : ks) {
        if (k > index.entries().size()) {
            throw DataError("k sweep asked for k=" + std::to_string(k) +
                            " but the index holds only " +
                            std::to_string(index.entries().size()) + " entries");
        }
        const double score = validation_bleu4(
            ckpt.params, vocab, ckpt.config.model, k > 0 ? &index : nullptr, k, records,
            /*stage2_pass=*/ckpt.stage == 2, ckpt.config.corr_residual, ckpt.config.threads);
        table.emplace_back(k, score);
    }
    return table;
}

}  // namespace dart
