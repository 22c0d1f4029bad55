#include "dart/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dart/disease.hpp"
#include "dart/encoders.hpp"
#include "dart/error.hpp"
#include "dart/log.hpp"
#include "dart/lossaudit.hpp"
#include "dart/metrics.hpp"
#include "dart/parallel.hpp"
#include "dart/trainer.hpp"
#include "json.hpp"

namespace dart {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Layered run configuration: optional base (a stage-1 checkpoint's
// embedded config), then the --config file, then --set overrides. Unknown
// keys are rejected before any defaulting can hide a typo.
TrainConfig resolve_train_config(const Config* base, const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
    Config merged = base ? *base : Config();
    if (!config_path.empty()) {
        const Config file = Config::load_file(config_path);
        for (const auto& [key, value] : file.entries()) merged.set(key, value);
    }
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw UsageError("--set expects key=value, got \"" + kv + "\"");
        }
        const std::string key = trim(kv.substr(0, eq));
        const std::string value = trim(kv.substr(eq + 1));
        if (key.empty()) throw UsageError("--set has an empty key in \"" + kv + "\"");
        merged.set(key, value);
    }
    merged.reject_unknown(TrainConfig::known_keys());
    return TrainConfig::from_config(merged);
}

std::vector<CorpusRecord> select_split(std::vector<CorpusRecord> records,
                                       const std::string& split) {
    if (split == "all") return records;
    Split want;
    if (split == "train") {
        want = Split::kTrain;
    } else if (split == "val") {
        want = Split::kVal;
    } else if (split == "test") {
        want = Split::kTest;
    } else {
        throw UsageError("unknown split \"" + split + "\" (train, val, test, all)");
    }
    std::vector<CorpusRecord> out;
    for (auto& rec : records) {
        if (hash_split(rec.id) == want) out.push_back(std::move(rec));
    }
    return out;
}

const CorpusRecord& find_record(const std::vector<CorpusRecord>& records,
                                const std::string& id) {
    for (const CorpusRecord& rec : records) {
        if (rec.id == id) return rec;
    }
    throw DataError("record id \"" + id + "\" not found in the corpus");
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open \"" + path + "\" for writing");
    out << text;
    if (!out.flush()) throw DataError("write to \"" + path + "\" failed");
}

// ---- per-subcommand option bundles ----

struct GenCorpusOpts {
    std::uint64_t seed = 7;
    std::size_t n = 2600;
    std::size_t d = 8;
    std::size_t h = 32;
    std::size_t w = 32;
    std::string out;
};

struct TrainOpts {
    int stage = 1;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string corpus;
    std::string out;
    std::string log_path;
    std::string init;  // stage-1 checkpoint, stage 2 only
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

struct IndexOpts {
    std::string ckpt;
    std::string corpus;
    std::string out;
    std::size_t threads = 1;
};

struct GenerateOpts {
    std::string ckpt;
    std::string index;
    std::string corpus;
    std::string split = "test";
    std::optional<std::size_t> k;
    std::string out;
    std::size_t threads = 1;
};

struct RetrieveOpts {
    std::string ckpt;
    std::string index;
    std::string corpus;
    std::string image_id;
    std::optional<std::size_t> k;
};

struct ClassifyOpts {
    std::string ckpt;
    std::string corpus;
    std::string split = "test";
    std::string id;
    std::string out;
    std::size_t threads = 1;
};

struct EvalOpts {
    std::string pred;
    std::string ref;
    std::string pred_field = "report";
    std::string ref_field = "report";
    std::string out;
};

struct AblateOpts {
    std::string setting;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string corpus;
    std::string out;
    std::string log_path;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

struct SweepOpts {
    std::string ckpt;
    std::string index;
    std::string corpus;
    std::string split = "test";
    std::string k_spec = "0..5";
    std::string out;
};

struct GradcheckOpts {
    std::uint64_t seed = 7;
    double step = 1e-5;
    double tol = 1e-4;
};

// ---- runners ----

void run_gen_corpus(const GenCorpusOpts& o) {
    if (o.out.empty()) throw UsageError("gen-corpus: --out is required");
    const auto records = generate_corpus(o.seed, o.n, o.d, o.h, o.w);
    save_jsonl(records, o.out);
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& rec : records) {
        switch (hash_split(rec.id)) {
            case Split::kTrain: ++train; break;
            case Split::kVal: ++val; break;
            case Split::kTest: ++test; break;
        }
    }
    json j{{"out", o.out},       {"records", records.size()},
           {"train", train},     {"val", val},
           {"test", test},       {"diseases", o.d},
           {"seed", o.seed},     {"vocab_types", build_vocab(records).size()}};
    std::cout << j.dump(2) << "\n";
}

void run_train(const TrainOpts& o) {
    if (o.stage != 1 && o.stage != 2) {
        throw UsageError("train: --stage must be 1 or 2, got " + std::to_string(o.stage));
    }
    if (o.corpus.empty()) throw UsageError("train: --corpus is required");
    if (o.out.empty()) throw UsageError("train: --out is required");

    std::optional<Checkpoint> init;
    std::optional<Config> base;
    if (o.stage == 2) {
        if (o.init.empty()) {
            throw UsageError("train: --stage 2 requires --init <stage-1 checkpoint>");
        }
        init = load_checkpoint(o.init);
        base = init->config.to_config();
    }
    TrainConfig cfg =
        resolve_train_config(base ? &*base : nullptr, o.config_path, o.overrides);
    if (o.seed) cfg.seed = *o.seed;
    cfg.threads = o.threads;
    cfg.validate();

    const CorpusSplits splits = split_corpus(load_jsonl(o.corpus));
    log_info("train: " + std::to_string(splits.train.size()) + " train / " +
             std::to_string(splits.val.size()) + " val / " +
             std::to_string(splits.test.size()) + " test records");

    std::ofstream log_stream;
    std::ostream* metrics_log = nullptr;
    if (!o.log_path.empty()) {
        log_stream.open(o.log_path, std::ios::trunc);
        if (!log_stream) throw DataError("cannot open \"" + o.log_path + "\" for writing");
        metrics_log = &log_stream;
    }

    const Checkpoint ckpt = o.stage == 1
                                ? run_stage1(cfg, splits.train, splits.val, metrics_log)
                                : run_stage2(cfg, *init, splits.train, splits.val, metrics_log);
    save_checkpoint(ckpt, o.out);
    json j{{"stage", o.stage},
           {"out", o.out},
           {"train_records", splits.train.size()},
           {"val_records", splits.val.size()},
           {"vocab_size", ckpt.config.model.vocab_size},
           {"param_groups", ckpt.params.count()}};
    std::cout << j.dump(2) << "\n";
}

void run_index(const IndexOpts& o) {
    if (o.ckpt.empty() || o.corpus.empty() || o.out.empty()) {
        throw UsageError("index: --ckpt, --corpus, and --out are required");
    }
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const Vocabulary vocab = vocab_from_text(ckpt.vocab_text);
    const CorpusSplits splits = split_corpus(load_jsonl(o.corpus));
    const FrozenIndex index = build_index_from_corpus(ckpt.params, vocab, ckpt.config.model,
                                                      splits.train, o.threads);
    index.save(o.out);
    json j{{"out", o.out},
           {"entries", index.entries().size()},
           {"d", index.d()},
           {"e", index.e()},
           {"content_hash", hex64(index.content_hash())}};
    std::cout << j.dump(2) << "\n";
}

json generation_line(const CorpusRecord& rec, const GenerationOutput& out) {
    json j{{"id", rec.id},
           {"stage1_report", out.stage1.report},
           {"stage2_report", out.has_stage2 ? json(out.stage2.report) : json(nullptr)},
           {"retrieved_ids", out.stage1.retrieved_record_ids},
           {"truncated",
            out.stage1.truncated || (out.has_stage2 && out.stage2.truncated)}};
    return j;
}

void run_generate(const GenerateOpts& o) {
    if (o.ckpt.empty() || o.corpus.empty()) {
        throw UsageError("generate: --ckpt and --corpus are required");
    }
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const Vocabulary vocab = vocab_from_text(ckpt.vocab_text);
    const std::size_t k = o.k ? *o.k : ckpt.config.model.k;
    std::optional<FrozenIndex> index;
    if (!o.index.empty()) {
        index = FrozenIndex::load(o.index);
    } else if (k > 0) {
        throw UsageError("generate: --index is required when k > 0");
    }
    const std::vector<CorpusRecord> records = select_split(load_jsonl(o.corpus), o.split);
    if (records.empty()) throw DataError("generate: no records in split \"" + o.split + "\"");

    const bool stage2_pass = ckpt.params.has("cor/psi");
    std::vector<json> lines(records.size());
    parallel_for(records.size(), o.threads, [&](std::size_t i) {
        const GenerationOutput out =
            generate_for_record(ckpt.params, vocab, ckpt.config.model,
                                index ? &*index : nullptr, k, records[i], stage2_pass,
                                ckpt.config.corr_residual);
        lines[i] = generation_line(records[i], out);
    });

    std::ostringstream body;
    for (const json& line : lines) body << line.dump() << "\n";
    if (o.out.empty()) {
        std::cout << body.str();
    } else {
        write_text_file(o.out, body.str());
        json j{{"out", o.out}, {"records", records.size()}, {"k", k}};
        std::cout << j.dump(2) << "\n";
    }
}

void run_retrieve(const RetrieveOpts& o) {
    if (o.ckpt.empty() || o.index.empty() || o.corpus.empty() || o.image_id.empty()) {
        throw UsageError("retrieve: --ckpt, --index, --corpus, and --image are required");
    }
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const FrozenIndex index = FrozenIndex::load(o.index);
    const std::vector<CorpusRecord> records = load_jsonl(o.corpus);
    const CorpusRecord& rec = find_record(records, o.image_id);
    const std::size_t k = o.k ? *o.k : ckpt.config.model.k;

    const Matrix f_i = encode_image(ckpt.params, rec.views, ckpt.config.model);
    const auto hits = topk(f_i, index.entries(), k, rec.id);
    json hit_list = json::array();
    for (const RetrievalHit& hit : hits) {
        hit_list.push_back(json{{"entry_id", hit.entry_id},
                                {"record_id", hit.record_id},
                                {"similarity", hit.similarity},
                                {"report", hit.report}});
    }
    json j{{"id", rec.id}, {"k", k}, {"hits", hit_list}};
    std::cout << j.dump(2) << "\n";
}

void run_classify(const ClassifyOpts& o) {
    if (o.ckpt.empty() || o.corpus.empty()) {
        throw UsageError("classify: --ckpt and --corpus are required");
    }
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    std::vector<CorpusRecord> records = load_jsonl(o.corpus);
    if (!o.id.empty()) {
        records = {find_record(records, o.id)};
    } else {
        records = select_split(std::move(records), o.split);
    }
    if (records.empty()) throw DataError("classify: no records in split \"" + o.split + "\"");

    std::vector<json> lines(records.size());
    parallel_for(records.size(), o.threads, [&](std::size_t i) {
        const std::vector<int> predicted =
            classify_record(ckpt.params, ckpt.config.model, records[i]);
        lines[i] = json{{"id", records[i].id},
                        {"predicted", predicted},
                        {"truth", records[i].diseases}};
    });
    std::ostringstream body;
    for (const json& line : lines) body << line.dump() << "\n";
    if (o.out.empty()) {
        std::cout << body.str();
    } else {
        write_text_file(o.out, body.str());
        json j{{"out", o.out}, {"records", records.size()}};
        std::cout << j.dump(2) << "\n";
    }
}

// Reads a JSONL file and extracts (id, field) pairs in file order.
std::vector<std::pair<std::string, std::string>> read_report_jsonl(const std::string& path,
                                                                   const std::string& field) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open \"" + path + "\"");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": invalid JSON: " + e.what());
        }
        if (!j.contains("id") || !j["id"].is_string()) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": missing string field \"id\"");
        }
        if (!j.contains(field) || !j[field].is_string()) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": missing string field \"" + field + "\"");
        }
        out.emplace_back(j["id"].get<std::string>(), j[field].get<std::string>());
    }
    if (out.empty()) throw DataError(path + ": no records");
    return out;
}

json metric_report_json(const MetricReport& report, const std::vector<std::string>& keywords) {
    json per_disease = json::object();
    for (std::size_t i = 0; i < report.per_disease.size(); ++i) {
        const CeMetrics& ce = report.per_disease[i];
        per_disease[keywords[i]] = json{{"precision", ce.precision}, {"recall", ce.recall},
                                        {"f1", ce.f1},               {"tp", ce.tp},
                                        {"fp", ce.fp},               {"fn", ce.fn}};
    }
    return json{{"records", report.records},
                {"bleu1", report.bleu1},
                {"bleu2", report.bleu2},
                {"bleu3", report.bleu3},
                {"bleu4", report.bleu4},
                {"rouge_l", report.rouge},
                {"ce",
                 json{{"precision", report.ce.precision},
                      {"recall", report.ce.recall},
                      {"f1", report.ce.f1},
                      {"tp", report.ce.tp},
                      {"fp", report.ce.fp},
                      {"fn", report.ce.fn}}},
                {"per_disease", per_disease}};
}

void run_eval(const EvalOpts& o) {
    if (o.pred.empty() || o.ref.empty()) {
        throw UsageError("eval: --pred and --ref are required");
    }
    const auto preds = read_report_jsonl(o.pred, o.pred_field);
    const auto refs = read_report_jsonl(o.ref, o.ref_field);

    std::map<std::string, std::string> pred_by_id;
    for (const auto& [id, text] : preds) {
        if (!pred_by_id.emplace(id, text).second) {
            throw DataError(o.pred + ": duplicate prediction id \"" + id + "\"");
        }
    }
    std::vector<std::string> pred_texts;
    std::vector<std::string> ref_texts;
    for (const auto& [id, text] : refs) {
        const auto it = pred_by_id.find(id);
        if (it == pred_by_id.end()) {
            throw DataError("eval: reference id \"" + id + "\" has no prediction");
        }
        pred_texts.push_back(it->second);
        ref_texts.push_back(text);
        pred_by_id.erase(it);
    }
    if (!pred_by_id.empty()) {
        throw DataError("eval: prediction id \"" + pred_by_id.begin()->first +
                        "\" has no reference");
    }

    const std::vector<std::string>& keywords = disease_keywords();
    const MetricReport report = evaluate_reports(pred_texts, ref_texts, keywords);
    const json j = metric_report_json(report, keywords);
    std::cout << j.dump(2) << "\n";
    if (!o.out.empty()) write_text_file(o.out, j.dump(2) + "\n");
}

void run_ablate(const AblateOpts& o) {
    if (o.corpus.empty()) throw UsageError("ablate: --corpus is required");
    TrainConfig cfg = resolve_train_config(nullptr, o.config_path, o.overrides);
    apply_ablation_setting(cfg, o.setting);
    if (o.seed) cfg.seed = *o.seed;
    cfg.threads = o.threads;
    cfg.validate();

    const CorpusSplits splits = split_corpus(load_jsonl(o.corpus));
    std::ofstream log_stream;
    std::ostream* metrics_log = nullptr;
    if (!o.log_path.empty()) {
        log_stream.open(o.log_path, std::ios::trunc);
        if (!log_stream) throw DataError("cannot open \"" + o.log_path + "\" for writing");
        metrics_log = &log_stream;
    }

    Checkpoint ckpt = run_stage1(cfg, splits.train, splits.val, metrics_log);
    if (cfg.use_sc) {
        ckpt = run_stage2(cfg, ckpt, splits.train, splits.val, metrics_log);
    }
    if (!o.out.empty()) save_checkpoint(ckpt, o.out);

    // Test-split report card: decode with the trained weights, compare
    // against the ground-truth reports, and add classifier accuracy.
    const Vocabulary vocab = vocab_from_text(ckpt.vocab_text);
    const ModelConfig& m = ckpt.config.model;
    std::optional<FrozenIndex> index;
    const std::size_t k_eff = cfg.use_i2t ? m.k : 0;
    if (k_eff > 0) {
        index = build_index_from_corpus(ckpt.params, vocab, m, splits.train, o.threads);
    }
    const bool stage2_pass = ckpt.params.has("cor/psi");
    std::vector<std::string> pred_texts(splits.test.size());
    std::vector<std::string> ref_texts(splits.test.size());
    std::vector<std::vector<int>> predicted(splits.test.size());
    std::vector<std::vector<int>> truth(splits.test.size());
    parallel_for(splits.test.size(), o.threads, [&](std::size_t i) {
        const CorpusRecord& rec = splits.test[i];
        const GenerationOutput out =
            generate_for_record(ckpt.params, vocab, m, index ? &*index : nullptr, k_eff, rec,
                                stage2_pass, cfg.corr_residual);
        pred_texts[i] = out.has_stage2 ? out.stage2.report : out.stage1.report;
        ref_texts[i] = rec.report;
        predicted[i] = classify_record(ckpt.params, m, rec);
        truth[i] = rec.diseases;
    });
    const std::vector<std::string>& keywords = disease_keywords();
    const MetricReport report = evaluate_reports(pred_texts, ref_texts, keywords);
    const CeMetrics classifier = ce_metrics(predicted, truth);

    json j{{"setting", o.setting},
           {"stage", stage2_pass ? 2 : 1},
           {"use_cl", cfg.use_cl},
           {"use_i2t", cfg.use_i2t},
           {"use_dm", cfg.use_dm},
           {"use_sc", cfg.use_sc},
           {"seed", cfg.seed},
           {"test_records", splits.test.size()},
           {"metrics", metric_report_json(report, keywords)},
           {"classifier_f1", classifier.f1}};
    if (!o.out.empty()) j["ckpt"] = o.out;
    std::cout << j.dump(2) << "\n";
}

std::vector<std::size_t> parse_k_spec(const std::string& spec) {
    std::vector<std::size_t> ks;
    const auto range_pos = spec.find("..");
    try {
        if (range_pos != std::string::npos) {
            const std::size_t lo = std::stoull(trim(spec.substr(0, range_pos)));
            const std::size_t hi = std::stoull(trim(spec.substr(range_pos + 2)));
            if (hi < lo) throw UsageError("sweep-k: empty range \"" + spec + "\"");
            for (std::size_t k = lo; k <= hi; ++k) ks.push_back(k);
        } else {
            std::stringstream ss(spec);
            std::string part;
            while (std::getline(ss, part, ',')) {
                part = trim(part);
                if (!part.empty()) ks.push_back(std::stoull(part));
            }
        }
    } catch (const std::logic_error&) {
        throw UsageError("sweep-k: cannot parse --k \"" + spec + "\" (use N, N,M,... or N..M)");
    }
    if (ks.empty()) throw UsageError("sweep-k: --k \"" + spec + "\" names no values");
    return ks;
}

void run_sweep_k(const SweepOpts& o) {
    if (o.ckpt.empty() || o.index.empty() || o.corpus.empty()) {
        throw UsageError("sweep-k: --ckpt, --index, and --corpus are required");
    }
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const FrozenIndex index = FrozenIndex::load(o.index);
    const std::vector<CorpusRecord> records = select_split(load_jsonl(o.corpus), o.split);
    if (records.empty()) throw DataError("sweep-k: no records in split \"" + o.split + "\"");
    const auto table = sweep_k(ckpt, index, records, parse_k_spec(o.k_spec));

    std::ostringstream csv;
    csv << "k,bleu4\n";
    for (const auto& [k, bleu4] : table) csv << k << "," << bleu4 << "\n";
    std::cout << csv.str();
    if (!o.out.empty()) write_text_file(o.out, csv.str());
}

void run_gradcheck(const GradcheckOpts& o) {
    const auto checks = audit_loss_gradients(o.seed, o.step);
    json terms = json::array();
    for (const LossTermCheck& check : checks) {
        terms.push_back(json{{"term", check.term},
                             {"entries", check.report.entries_checked},
                             {"max_rel_err", check.report.max_rel_err},
                             {"worst_param", check.report.worst_param},
                             {"flagged_non_finite", check.report.flagged_non_finite},
                             {"ok", check.report.ok(o.tol)}});
    }
    json j{{"seed", o.seed},
           {"step", o.step},
           {"tolerance", o.tol},
           {"max_rel_err", audit_worst_rel_err(checks)},
           {"ok", audit_ok(checks, o.tol)},
           {"terms", terms}};
    std::cout << j.dump(2) << "\n";
}

}  // namespace

int run_cli(std::vector<std::string> args) {
    CLI::App app{"disease-aware retrieval-augmented radiology report generation"};
    app.require_subcommand(1);

    GenCorpusOpts gen_corpus_opts;
    auto* gen_corpus_cmd =
        app.add_subcommand("gen-corpus", "Generate a seeded synthetic corpus as JSONL");
    gen_corpus_cmd->add_option("--seed", gen_corpus_opts.seed, "Corpus seed");
    gen_corpus_cmd->add_option("--n", gen_corpus_opts.n, "Total record count");
    gen_corpus_cmd->add_option("--d", gen_corpus_opts.d, "Disease count");
    gen_corpus_cmd->add_option("--height", gen_corpus_opts.h, "Image height");
    gen_corpus_cmd->add_option("--width", gen_corpus_opts.w, "Image width");
    gen_corpus_cmd->add_option("--out", gen_corpus_opts.out, "Output JSONL path")->required();
    gen_corpus_cmd->callback([&] { run_gen_corpus(gen_corpus_opts); });

    TrainOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "Train stage 1 or stage 2");
    train_cmd->add_option("--stage", train_opts.stage, "Training stage (1 or 2)")->required();
    train_cmd->add_option("--config", train_opts.config_path, "Key-value config file");
    train_cmd->add_option("--set", train_opts.overrides, "Config override key=value");
    train_cmd->add_option("--corpus", train_opts.corpus, "Corpus JSONL path")->required();
    train_cmd->add_option("--out", train_opts.out, "Checkpoint output path")->required();
    train_cmd->add_option("--log", train_opts.log_path, "Per-step metrics JSONL path");
    train_cmd->add_option("--init", train_opts.init, "Stage-1 checkpoint (stage 2 only)");
    train_cmd->add_option("--seed", train_opts.seed, "Override train.seed");
    train_cmd->add_option("--threads", train_opts.threads, "Worker thread count");
    train_cmd->callback([&] { run_train(train_opts); });

    IndexOpts index_opts;
    auto* index_cmd =
        app.add_subcommand("index", "Build the frozen retrieval index over the train split");
    index_cmd->add_option("--ckpt", index_opts.ckpt, "Checkpoint path")->required();
    index_cmd->add_option("--corpus", index_opts.corpus, "Corpus JSONL path")->required();
    index_cmd->add_option("--out", index_opts.out, "Index output path")->required();
    index_cmd->add_option("--threads", index_opts.threads, "Worker thread count");
    index_cmd->callback([&] { run_index(index_opts); });

    GenerateOpts generate_opts;
    auto* generate_cmd =
        app.add_subcommand("generate", "Generate reports for a corpus split as JSONL");
    generate_cmd->add_option("--ckpt", generate_opts.ckpt, "Checkpoint path")->required();
    generate_cmd->add_option("--index", generate_opts.index, "Frozen index path");
    generate_cmd->add_option("--corpus", generate_opts.corpus, "Corpus JSONL path")->required();
    generate_cmd->add_option("--split", generate_opts.split, "train, val, test, or all");
    generate_cmd->add_option("--k", generate_opts.k, "Retrieved reports per image");
    generate_cmd->add_option("--out", generate_opts.out, "Write JSONL here instead of stdout");
    generate_cmd->add_option("--threads", generate_opts.threads, "Worker thread count");
    generate_cmd->callback([&] { run_generate(generate_opts); });

    RetrieveOpts retrieve_opts;
    auto* retrieve_cmd =
        app.add_subcommand("retrieve", "Show the top-k index hits for one record's image");
    retrieve_cmd->add_option("--ckpt", retrieve_opts.ckpt, "Checkpoint path")->required();
    retrieve_cmd->add_option("--index", retrieve_opts.index, "Frozen index path")->required();
    retrieve_cmd->add_option("--corpus", retrieve_opts.corpus, "Corpus JSONL path")->required();
    retrieve_cmd->add_option("--image", retrieve_opts.image_id, "Query record id")->required();
    retrieve_cmd->add_option("--k", retrieve_opts.k, "Hit count");
    retrieve_cmd->callback([&] { run_retrieve(retrieve_opts); });

    ClassifyOpts classify_opts;
    auto* classify_cmd =
        app.add_subcommand("classify", "Predicted disease vector per record as JSONL");
    classify_cmd->add_option("--ckpt", classify_opts.ckpt, "Checkpoint path")->required();
    classify_cmd->add_option("--corpus", classify_opts.corpus, "Corpus JSONL path")->required();
    classify_cmd->add_option("--split", classify_opts.split, "train, val, test, or all");
    classify_cmd->add_option("--id", classify_opts.id, "Classify one record id");
    classify_cmd->add_option("--out", classify_opts.out, "Write JSONL here instead of stdout");
    classify_cmd->add_option("--threads", classify_opts.threads, "Worker thread count");
    classify_cmd->callback([&] { run_classify(classify_opts); });

    EvalOpts eval_opts;
    auto* eval_cmd =
        app.add_subcommand("eval", "Score predictions against references (BLEU, ROUGE-L, CE)");
    eval_cmd->add_option("--pred", eval_opts.pred, "Predictions JSONL")->required();
    eval_cmd->add_option("--ref", eval_opts.ref, "References JSONL (a corpus file works)")
        ->required();
    eval_cmd->add_option("--pred-field", eval_opts.pred_field, "Report field in --pred");
    eval_cmd->add_option("--ref-field", eval_opts.ref_field, "Report field in --ref");
    eval_cmd->add_option("--out", eval_opts.out, "Also write the metrics JSON here");
    eval_cmd->callback([&] { run_eval(eval_opts); });

    AblateOpts ablate_opts;
    auto* ablate_cmd =
        app.add_subcommand("ablate", "Train one component-ablation setting and score it");
    ablate_cmd->add_option("--setting", ablate_opts.setting, "base, a, b, c, or d")->required();
    ablate_cmd->add_option("--config", ablate_opts.config_path, "Key-value config file");
    ablate_cmd->add_option("--set", ablate_opts.overrides, "Config override key=value");
    ablate_cmd->add_option("--corpus", ablate_opts.corpus, "Corpus JSONL path")->required();
    ablate_cmd->add_option("--out", ablate_opts.out, "Save the final checkpoint here");
    ablate_cmd->add_option("--log", ablate_opts.log_path, "Per-step metrics JSONL path");
    ablate_cmd->add_option("--seed", ablate_opts.seed, "Override train.seed");
    ablate_cmd->add_option("--threads", ablate_opts.threads, "Worker thread count");
    ablate_cmd->callback([&] { run_ablate(ablate_opts); });

    SweepOpts sweep_opts;
    auto* sweep_cmd =
        app.add_subcommand("sweep-k", "BLEU-4 as a function of retrieved-report count");
    sweep_cmd->add_option("--ckpt", sweep_opts.ckpt, "Checkpoint path")->required();
    sweep_cmd->add_option("--index", sweep_opts.index, "Frozen index path")->required();
    sweep_cmd->add_option("--corpus", sweep_opts.corpus, "Corpus JSONL path")->required();
    sweep_cmd->add_option("--split", sweep_opts.split, "train, val, test, or all");
    sweep_cmd->add_option("--k", sweep_opts.k_spec, "k values: N, N,M,... or N..M");
    sweep_cmd->add_option("--out", sweep_opts.out, "Also write the CSV here");
    sweep_cmd->callback([&] { run_sweep_k(sweep_opts); });

    GradcheckOpts gradcheck_opts;
    auto* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "Finite-difference audit of every loss term's gradients");
    gradcheck_cmd->add_option("--seed", gradcheck_opts.seed, "Audit seed");
    gradcheck_cmd->add_option("--step", gradcheck_opts.step, "Central-difference step");
    gradcheck_cmd->add_option("--tol", gradcheck_opts.tol, "Relative-error tolerance");
    gradcheck_cmd->callback([&] { run_gradcheck(gradcheck_opts); });

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        // CLI11's own exit codes are not part of the documented contract:
        // help is success, every parse failure is a usage error.
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        log_error(e.what());
        return 1;
    } catch (const DataError& e) {
        log_error(e.what());
        return 2;
    } catch (const Error& e) {
        log_error(e.what());
        return 3;
    } catch (const std::exception& e) {
        log_error(std::string("unexpected error: ") + e.what());
        return 3;
    }
    return 0;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    args.reserve(argc > 0 ? static_cast<std::size_t>(argc - 1) : 0);
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(std::move(args));
}

}  // namespace dart
