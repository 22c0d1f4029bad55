#include "dart/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dart/error.hpp"
#include "dart/rng.hpp"
#include "dart/tokenizer.hpp"
#include "json.hpp"

namespace dart {

namespace {

// 4x4 grid of blob cells; one fixed location per disease.
constexpr std::size_t kLocGrid = 4;

const std::vector<std::string> kKeywords = {
    "opacity",      "effusion",  "nodule",    "cardiomegaly",
    "pneumothorax", "fracture",  "edema",     "consolidation",
    "atelectasis",  "emphysema", "pneumonia", "granuloma",
    "scoliosis",    "hernia",    "fibrosis",  "calcification",
};

// Sentence text is kept in the tokenizer's canonical form (punctuation
// attached) so detokenize(tokenize(report)) is the identity on reports.
const std::vector<std::string> kPositiveTemplates = {
    "there is %.",
    "findings show %.",
    "% is seen.",
    "stable % is present.",
};

const std::vector<std::string> kNegativeTemplates = {
    "no evidence of %.",
    "without %.",
    "free of %.",
    "no %.",
};

std::string fill_template(const std::string& tpl, const std::string& keyword) {
    std::string out = tpl;
    const std::size_t pos = out.find('%');
    out.replace(pos, 1, keyword);
    return out;
}

// Keeps JSONL files compact; 1e-4 resolution is far below the noise floor.
double quantize_pixel(double v) { return std::round(v * 1e4) / 1e4; }

void stamp_blob(Matrix& view, std::size_t disease, double amplitude) {
    const std::size_t cell_r = disease / kLocGrid;
    const std::size_t cell_c = disease % kLocGrid;
    const double cy = (static_cast<double>(cell_r) + 0.5) * static_cast<double>(view.rows()) /
                      kLocGrid;
    const double cx = (static_cast<double>(cell_c) + 0.5) * static_cast<double>(view.cols()) /
                      kLocGrid;
    const double sigma = static_cast<double>(std::min(view.rows(), view.cols())) / 10.0;
    for (std::size_t r = 0; r < view.rows(); ++r) {
        for (std::size_t c = 0; c < view.cols(); ++c) {
            const double dy = static_cast<double>(r) - cy;
            const double dx = static_cast<double>(c) - cx;
            view.at(r, c) += amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        }
    }
}

Matrix render_view(Rng& rng, const std::vector<int>& diseases, std::size_t h, std::size_t w) {
    Matrix view(h, w, 0.0);
    for (std::size_t i = 0; i < diseases.size(); ++i) {
        if (!diseases[i]) continue;
        stamp_blob(view, i, rng.uniform(0.6, 1.0));
    }
    for (std::size_t p = 0; p < view.size(); ++p) {
        double v = view[p] + rng.normal(0.0, 0.05);
        v = std::clamp(v, 0.0, 1.0);
        view[p] = quantize_pixel(v);
    }
    return view;
}

std::string render_report(Rng& rng, const std::vector<int>& diseases) {
    std::vector<std::string> sentences;
    std::vector<std::size_t> absent;
    for (std::size_t i = 0; i < diseases.size(); ++i) {
        if (diseases[i]) {
            const std::string& tpl =
                kPositiveTemplates[rng.below(kPositiveTemplates.size())];
            sentences.push_back(fill_template(tpl, kKeywords[i]));
        } else {
            absent.push_back(i);
        }
    }
    // Up to three negative mentions; at least one when nothing is present
    // so the report is never empty.
    const std::size_t cap = std::min<std::size_t>(3, absent.size());
    std::size_t n_neg = cap == 0 ? 0 : rng.below(cap + 1);
    if (sentences.empty() && n_neg == 0) n_neg = 1;  // cap >= 1 here since d >= 2
    rng.shuffle(absent);
    for (std::size_t j = 0; j < n_neg; ++j) {
        const std::string& tpl = kNegativeTemplates[rng.below(kNegativeTemplates.size())];
        sentences.push_back(fill_template(tpl, kKeywords[absent[j]]));
    }
    rng.shuffle(sentences);
    std::string report;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        if (s) report += ' ';
        report += sentences[s];
    }
    return report;
}

}  // namespace

const std::vector<std::string>& disease_keywords() { return kKeywords; }

std::size_t max_diseases() { return kLocGrid * kLocGrid; }

Matrix disease_one_hot(const std::vector<int>& diseases) {
    Matrix y(diseases.size(), 2, 0.0);
    for (std::size_t i = 0; i < diseases.size(); ++i) {
        y.at(i, diseases[i] ? 0 : 1) = 1.0;
    }
    return y;
}

std::vector<CorpusRecord> generate_corpus(std::uint64_t seed, std::size_t n, std::size_t d,
                                          std::size_t h, std::size_t w) {
    if (n < 1) throw UsageError("generate_corpus: n must be >= 1");
    if (d < 2) throw UsageError("generate_corpus: d must be >= 2");
    if (d > max_diseases()) {
        throw UsageError("generate_corpus: " + std::to_string(d) +
                         " diseases exceed the " + std::to_string(max_diseases()) +
                         " available blob locations");
    }
    if (h < 8 || w < 8) throw UsageError("generate_corpus: views must be at least 8x8");
    std::vector<CorpusRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Per-record stream: record i is the same regardless of n.
        Rng rng(derive_seed(seed, "record", i));
        CorpusRecord rec;
        rec.id = "rec-" + std::to_string(seed) + "-" + std::to_string(i);
        rec.diseases.resize(d);
        for (std::size_t k = 0; k < d; ++k) rec.diseases[k] = rng.bernoulli(0.3) ? 1 : 0;
        const std::size_t n_views = rng.bernoulli(0.5) ? 2 : 1;
        for (std::size_t v = 0; v < n_views; ++v) {
            rec.views.push_back(render_view(rng, rec.diseases, h, w));
        }
        rec.report = render_report(rng, rec.diseases);
        records.push_back(std::move(rec));
    }
    return records;
}

void save_jsonl(const std::vector<CorpusRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const CorpusRecord& rec : records) {
        nlohmann::json j;
        j["id"] = rec.id;
        nlohmann::json views = nlohmann::json::array();
        for (const Matrix& v : rec.views) {
            nlohmann::json grid = nlohmann::json::array();
            for (std::size_t r = 0; r < v.rows(); ++r) {
                nlohmann::json row = nlohmann::json::array();
                for (std::size_t c = 0; c < v.cols(); ++c) row.push_back(v.at(r, c));
                grid.push_back(std::move(row));
            }
            views.push_back(std::move(grid));
        }
        j["views"] = std::move(views);
        j["report"] = rec.report;
        j["diseases"] = rec.diseases;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

namespace {

[[noreturn]] void line_error(std::size_t lineno, const std::string& what) {
    throw DataError("line " + std::to_string(lineno) + ": " + what);
}

}  // namespace

std::vector<CorpusRecord> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::vector<CorpusRecord> records;
    std::string line;
    std::size_t lineno = 0;
    std::size_t h = 0, w = 0, d = 0;  // fixed by the first record
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            line_error(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) line_error(lineno, "record is not a JSON object");
        for (const char* field : {"id", "views", "report", "diseases"}) {
            if (!j.contains(field)) {
                line_error(lineno, std::string("missing field \"") + field + "\"");
            }
        }
        CorpusRecord rec;
        if (!j["id"].is_string()) line_error(lineno, "\"id\" must be a string");
        rec.id = j["id"].get<std::string>();
        if (!j["report"].is_string()) line_error(lineno, "\"report\" must be a string");
        rec.report = j["report"].get<std::string>();
        if (rec.report.empty()) line_error(lineno, "\"report\" is empty");
        if (!j["diseases"].is_array()) line_error(lineno, "\"diseases\" must be an array");
        for (const auto& v : j["diseases"]) {
            if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
                line_error(lineno, "\"diseases\" entries must be 0 or 1");
            }
            rec.diseases.push_back(v.get<int>());
        }
        if (!j["views"].is_array() || j["views"].empty() || j["views"].size() > 2) {
            line_error(lineno, "\"views\" must hold 1 or 2 grids");
        }
        for (const auto& grid : j["views"]) {
            if (!grid.is_array() || grid.empty()) line_error(lineno, "view grid must be a non-empty array");
            const std::size_t rows = grid.size();
            const std::size_t cols = grid[0].is_array() ? grid[0].size() : 0;
            if (rows < 8 || cols < 8) line_error(lineno, "view grid must be at least 8x8");
            Matrix view(rows, cols);
            for (std::size_t r = 0; r < rows; ++r) {
                if (!grid[r].is_array() || grid[r].size() != cols) {
                    line_error(lineno, "ragged view grid");
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    if (!grid[r][c].is_number()) line_error(lineno, "pixel is not a number");
                    const double px = grid[r][c].get<double>();
                    if (px < 0.0 || px > 1.0) line_error(lineno, "pixel outside [0, 1]");
                    view.at(r, c) = px;
                }
            }
            rec.views.push_back(std::move(view));
        }
        if (records.empty()) {
            h = rec.views[0].rows();
            w = rec.views[0].cols();
            d = rec.diseases.size();
        }
        for (const Matrix& v : rec.views) {
            if (v.rows() != h || v.cols() != w) {
                line_error(lineno, "view shape differs from the rest of the corpus");
            }
        }
        if (rec.diseases.size() != d) {
            line_error(lineno, "diseases length differs from the rest of the corpus");
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw DataError("corpus file holds no records: " + path);
    return records;
}

Split hash_split(const std::string& record_id) {
    // 7:1:2 by id hash; stable across runs and platforms.
    const std::uint64_t bucket = fnv1a64(record_id) % 10;
    if (bucket < 7) return Split::kTrain;
    if (bucket < 8) return Split::kVal;
    return Split::kTest;
}

bool keyword_positive_in(const std::string& report, const std::string& keyword) {
    const std::vector<std::string> tokens = split_tokens(report);
    bool negated = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (t == ".") {
            negated = false;  // negation scope ends with the sentence
            continue;
        }
        if (t == "no" || t == "without" ||
            (t == "free" && i + 1 < tokens.size() && tokens[i + 1] == "of")) {
            negated = true;
            continue;
        }
        if (t == keyword && !negated) return true;
    }
    return false;
}

}  // namespace dart
