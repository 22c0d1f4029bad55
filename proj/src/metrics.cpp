#include "dart/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>

#include "dart/corpus.hpp"
#include "dart/error.hpp"
#include "dart/log.hpp"
#include "dart/tokenizer.hpp"

namespace dart {

namespace {

constexpr double kRougeBeta = 1.2;

void check_pairing(const std::vector<TokenSeq>& candidates,
                   const std::vector<TokenSeq>& references, const char* what) {
    if (candidates.empty()) {
        throw DataError(std::string(what) + " needs at least one candidate/reference pair");
    }
    if (candidates.size() != references.size()) {
        throw DataError(std::string(what) + " got " + std::to_string(candidates.size()) +
                        " candidates but " + std::to_string(references.size()) + " references");
    }
}

// n-grams keyed as separator-joined strings; token text never contains
// the separator because the tokenizer splits on non-alphanumerics.
std::map<std::string, std::uint64_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
    std::map<std::string, std::uint64_t> counts;
    if (seq.size() < n) return counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        std::string key = seq[i];
        for (std::size_t j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key.append(seq[i + j]);
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
            std::size_t n) {
    if (n < 1 || n > 4) {
        throw UsageError("bleu order must be between 1 and 4, got " + std::to_string(n));
    }
    check_pairing(candidates, references, "bleu");

    // Integer corpus counts, so the score is independent of record order.
    std::vector<std::uint64_t> matched(n, 0);
    std::vector<std::uint64_t> total(n, 0);
    std::uint64_t cand_len = 0;
    std::uint64_t ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const TokenSeq& cand = candidates[i];
        const TokenSeq& ref = references[i];
        cand_len += cand.size();
        ref_len += ref.size();
        for (std::size_t g = 1; g <= n; ++g) {
            if (cand.size() < g) continue;
            total[g - 1] += cand.size() - g + 1;
            const auto ref_counts = ngram_counts(ref, g);
            for (const auto& [key, count] : ngram_counts(cand, g)) {
                const auto it = ref_counts.find(key);
                if (it != ref_counts.end()) matched[g - 1] += std::min(count, it->second);
            }
        }
    }

    if (cand_len == 0) return 0.0;
    double log_precision = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
        if (total[g] == 0 || matched[g] == 0) return 0.0;
        log_precision += std::log(static_cast<double>(matched[g]) / static_cast<double>(total[g]));
    }
    log_precision /= static_cast<double>(n);
    const double brevity =
        cand_len < ref_len
            ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
            : 1.0;
    return brevity * std::exp(log_precision);
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    // One rolling row keeps the DP at O(|b|) space.
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    check_pairing(candidates, references, "rouge-l");
    const double beta2 = kRougeBeta * kRougeBeta;
    double sum_f = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const std::size_t lcs = lcs_length(candidates[i], references[i]);
        if (lcs == 0) continue;
        const double p = static_cast<double>(lcs) / static_cast<double>(candidates[i].size());
        const double r = static_cast<double>(lcs) / static_cast<double>(references[i].size());
        sum_f += (1.0 + beta2) * p * r / (r + beta2 * p);
    }
    return sum_f / static_cast<double>(candidates.size());
}

std::vector<int> label_report(const std::string& report,
                              const std::vector<std::string>& keywords) {
    std::vector<int> labels(keywords.size(), 0);
    if (split_tokens(report).empty()) {
        log_info("labeler found no tokens in report; marking all diseases absent");
        return labels;
    }
    for (std::size_t i = 0; i < keywords.size(); ++i) {
        labels[i] = keyword_positive_in(report, keywords[i]) ? 1 : 0;
    }
    return labels;
}

CeMetrics ce_metrics(const std::vector<std::vector<int>>& predicted,
                     const std::vector<std::vector<int>>& truth) {
    if (predicted.empty()) {
        throw DataError("clinical-efficacy metrics need at least one record");
    }
    if (predicted.size() != truth.size()) {
        throw DataError("clinical-efficacy metrics got " + std::to_string(predicted.size()) +
                        " predictions but " + std::to_string(truth.size()) + " truths");
    }
    CeMetrics out;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i].size() != truth[i].size()) {
            throw DataError("record " + std::to_string(i) + " has " +
                            std::to_string(predicted[i].size()) + " predicted labels but " +
                            std::to_string(truth[i].size()) + " true labels");
        }
        for (std::size_t j = 0; j < predicted[i].size(); ++j) {
            const bool pred = predicted[i][j] != 0;
            const bool real = truth[i][j] != 0;
            if (pred && real) ++out.tp;
            if (pred && !real) ++out.fp;
            if (!pred && real) ++out.fn;
        }
    }
    const double tp = static_cast<double>(out.tp);
    if (out.tp + out.fp > 0) out.precision = tp / static_cast<double>(out.tp + out.fp);
    if (out.tp + out.fn > 0) out.recall = tp / static_cast<double>(out.tp + out.fn);
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

MetricReport evaluate_reports(const std::vector<std::string>& predicted,
                              const std::vector<std::string>& reference,
                              const std::vector<std::string>& keywords) {
    if (predicted.empty()) throw DataError("evaluation needs at least one record");
    if (predicted.size() != reference.size()) {
        throw DataError("evaluation got " + std::to_string(predicted.size()) +
                        " predictions but " + std::to_string(reference.size()) + " references");
    }
    std::vector<TokenSeq> cands(predicted.size());
    std::vector<TokenSeq> refs(reference.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        cands[i] = split_tokens(predicted[i]);
        refs[i] = split_tokens(reference[i]);
    }

    MetricReport report;
    report.records = predicted.size();
    report.bleu1 = bleu(cands, refs, 1);
    report.bleu2 = bleu(cands, refs, 2);
    report.bleu3 = bleu(cands, refs, 3);
    report.bleu4 = bleu(cands, refs, 4);
    report.rouge = rouge_l(cands, refs);

    std::vector<std::vector<int>> pred_labels(predicted.size());
    std::vector<std::vector<int>> ref_labels(reference.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        pred_labels[i] = label_report(predicted[i], keywords);
        ref_labels[i] = label_report(reference[i], keywords);
    }
    report.ce = ce_metrics(pred_labels, ref_labels);

    report.per_disease.resize(keywords.size());
    for (std::size_t j = 0; j < keywords.size(); ++j) {
        std::vector<std::vector<int>> pred_col(predicted.size());
        std::vector<std::vector<int>> ref_col(reference.size());
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            pred_col[i] = {pred_labels[i][j]};
            ref_col[i] = {ref_labels[i][j]};
        }
        report.per_disease[j] = ce_metrics(pred_col, ref_col);
    }
    return report;
}

}  // namespace dart
