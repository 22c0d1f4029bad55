#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dart/adamw.hpp"
#include "dart/alignment.hpp"
#include "dart/config.hpp"
#include "dart/corpus.hpp"
#include "dart/model_config.hpp"
#include "dart/retrieval.hpp"
#include "dart/tokenizer.hpp"

namespace dart {

// Two-stage training orchestration: the stage-1 composite loss over
// batches with the feature queue, the stage-2 correction-only loop, the
// checkpoint format, and the shared inference pipeline.

struct TrainConfig {
    ModelConfig model;

    // Loss weights. The contrastive term always carries weight 1.
    double lambda_cls = 1.0;
    double lambda_gen = 1.0;
    double lambda_m = 10.0;
    double lambda_cor = 5.0;

    std::size_t batch = 8;
    double lr = 3e-4;
    double weight_decay = 0.01;
    double clip_norm = 5.0;
    std::size_t stage1_epochs = 30;
    std::size_t stage2_epochs = 10;
    std::uint64_t seed = 7;

    // Component toggles, cumulative in the ablation presets: contrastive
    // alignment, image-to-text retrieval into the generator, the
    // disease-matching term, and the stage-2 self-correction pass.
    bool use_cl = true;
    bool use_i2t = true;
    bool use_dm = true;
    bool use_sc = true;

    // When set, the disease-matching constraint is logged but its
    // differentiable surrogate is kept out of the loss.
    bool gamma_exact = false;
    // Stage-2 experimentation switches: re-decode the stage-1 report at
    // every step instead of once up front, and add the residual path to
    // the correction module.
    bool online_decode = false;
    bool corr_residual = false;

    // Worker threads for validation decoding and index building. Runtime
    // knob only: excluded from serialization so checkpoints stay
    // byte-identical across machine layouts.
    std::size_t threads = 1;

    void validate() const;

    static TrainConfig from_config(const Config& cfg);
    void write_to(Config& cfg) const;
    Config to_config() const;
    // Every key from_config understands, for unknown-key rejection.
    static std::map<std::string, bool> known_keys();
};

// Cumulative component presets, rows base/a/b/c/d: base trains only the
// classifier and generator terms; a adds contrastive alignment; b adds
// retrieval; c adds disease matching; d adds self-correction.
void apply_ablation_setting(TrainConfig& cfg, const std::string& setting);

// Per-step measurements. Raw (unweighted) component values; `total` is
// the weighted sum actually differentiated, so
//   total == l_con + lambda_cls*l_cls + lambda_gen*l_gen
//            + lambda_m*gamma_surrogate        (stage 1, active terms)
//   total == l_gen + lambda_cor*l_cor          (stage 2)
// holds to within accumulated rounding (1e-12 in tests).
struct StepLog {
    double total = 0.0;
    double l_con = 0.0;
    double l_cls = 0.0;
    double l_gen = 0.0;
    double l_cor = 0.0;
    double gamma_exact = 0.0;      // reported constraint over the batch
    double gamma_surrogate = 0.0;  // similarity-weighted surrogate
    double grad_norm = 0.0;        // pre-clip global norm
    double tau = 0.0;              // temperature after the step
};

// Validates gradient finiteness (error names the offending parameter
// group), clips to cfg.clip_norm, applies one AdamW step, and re-clamps
// the temperature. Returns the pre-clip global norm.
double optimizer_step(ParamStore& params, GradMap& grads, AdamW& opt, const TrainConfig& cfg);

// One stage-1 batch: forward all active loss terms on a fresh tape,
// backward, step, then push the batch's detached features into the queue.
// Records retrieve from a snapshot taken before the step; a record whose
// candidate pool is still smaller than k trains without retrieved blocks
// that step.
StepLog stage1_step(ParamStore& params, AdamW& opt, TrainingQueue& queue,
                    const std::vector<const CorpusRecord*>& batch, const Vocabulary& vocab,
                    const TrainConfig& cfg);

// Frozen per-record inputs for a stage-2 step: everything upstream of the
// correction module is constant once stage 1 is done.
struct Stage2Item {
    const CorpusRecord* record = nullptr;
    Matrix f_i;                      // image features (correction target)
    Matrix f_d;                      // disease-relevant features
    Matrix f_generated;              // text features of the stage-1 report
    std::vector<RetrievalHit> hits;  // retrieved conditioning blocks
    std::vector<std::size_t> target;  // ground-truth token ids
    Matrix y;                         // d x 2 annotation, for logging
};

Stage2Item prepare_stage2_item(const ParamStore& params, const Vocabulary& vocab,
                               const TrainConfig& cfg, const FrozenIndex& index,
                               const CorpusRecord& rec);

// One stage-2 record step: corrected features into the conditioning
// bundle, teacher-forced generation loss plus weighted correction loss,
// gradient step on the correction embedding only. Any gradient reaching
// another parameter group is an invariant violation.
StepLog stage2_step(ParamStore& params, AdamW& opt, const Stage2Item& item,
                    const TrainConfig& cfg);

// Versioned binary training artifact. save -> load -> save is
// byte-identical; the trailing content hash verifies integrity.
struct Checkpoint {
    static constexpr std::uint64_t kVersion = 1;

    std::uint64_t stage = 1;  // 1 or 2
    TrainConfig config;
    std::string vocab_text;
    ParamStore params;
    std::int64_t opt_t = 0;
    GradMap opt_m;
    GradMap opt_v;
    bool has_queue = false;  // stage-1 checkpoints carry the queue
    std::vector<QueueEntry> queue_entries;
    std::uint64_t queue_next_id = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Deterministic 7:1:2 partition of one corpus file by record-id hash.
struct CorpusSplits {
    std::vector<CorpusRecord> train;
    std::vector<CorpusRecord> val;
    std::vector<CorpusRecord> test;
};
CorpusSplits split_corpus(std::vector<CorpusRecord> records);

// Inference-time retrieval source: text features of every training
// record under the given (frozen) parameters, entry ids in record order.
FrozenIndex build_index_from_corpus(const ParamStore& params, const Vocabulary& vocab,
                                    const ModelConfig& cfg,
                                    const std::vector<CorpusRecord>& records,
                                    std::size_t threads);

// One record's generated report plus its provenance.
struct GeneratedReport {
    std::string report;
    std::vector<std::size_t> ids;
    std::vector<std::uint64_t> retrieved_entry_ids;
    std::vector<std::string> retrieved_record_ids;
    bool truncated = false;
};

// First-stage inference: classify, retrieve k blocks from the index
// (none when k is 0), condition with the placeholder text slot, greedy
// decode. index may be null only when k is 0.
GeneratedReport stage1_generate(const ParamStore& params, const Vocabulary& vocab,
                                const ModelConfig& cfg, const FrozenIndex* index, std::size_t k,
                                const CorpusRecord& rec);

// Both passes for one record: the stage-1 report, then (when the
// correction embedding is present and requested) the re-aligned decode.
struct GenerationOutput {
    GeneratedReport stage1;
    GeneratedReport stage2;
    bool has_stage2 = false;
};
GenerationOutput generate_for_record(const ParamStore& params, const Vocabulary& vocab,
                                     const ModelConfig& cfg, const FrozenIndex* index,
                                     std::size_t k, const CorpusRecord& rec, bool stage2_pass,
                                     bool corr_residual);

// Predicted per-disease presence for one record (classifier argmax).
std::vector<int> classify_record(const ParamStore& params, const ModelConfig& cfg,
                                 const CorpusRecord& rec);

// Corpus BLEU-4 of generated reports against the records' own reports.
// Decoding parallelizes across records; results are position-stable, so
// the score is independent of the thread count.
double validation_bleu4(const ParamStore& params, const Vocabulary& vocab,
                        const ModelConfig& cfg, const FrozenIndex* index, std::size_t k,
                        const std::vector<CorpusRecord>& records, bool stage2_pass,
                        bool corr_residual, std::size_t threads);

// Full training loops. Fixed-seed shuffling per epoch; per-epoch
// validation BLEU-4; the best-scoring epoch's state is returned. Metric
// lines stream to `metrics_log` as JSON objects, one per line, when the
// stream is non-null.
Checkpoint run_stage1(const TrainConfig& cfg, const std::vector<CorpusRecord>& train,
                      const std::vector<CorpusRecord>& val, std::ostream* metrics_log);
Checkpoint run_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                      const std::vector<CorpusRecord>& train,
                      const std::vector<CorpusRecord>& val, std::ostream* metrics_log);

// Inference-only k sweep: BLEU-4 of the checkpoint's generate pass over
// `records` for each requested k, in request order.
std::vector<std::pair<std::size_t, double>> sweep_k(const Checkpoint& ckpt,
                                                    const FrozenIndex& index,
                                                    const std::vector<CorpusRecord>& records,
                                                    const std::vector<std::size_t>& ks);

}  // namespace dart
