#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dart {

// Descriptive-accuracy metrics (corpus BLEU, ROUGE-L) and clinical-efficacy
// metrics (precision/recall/F1 of rule-extracted disease labels). All
// sequences are plain token lists with sequence markers already stripped.

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU-n: clipped n-gram precision with uniform weights over
// orders 1..n, geometric mean, and brevity penalty exp(1 - r/c) when the
// total candidate length c falls below the total reference length r. Any
// order with zero matches makes the whole score 0 (no smoothing). An empty
// candidate contributes zero counts; an empty candidate list is an error.
double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
            std::size_t n);

// Exact longest-common-subsequence length by dynamic programming.
std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

// ROUGE-L: per-record LCS F-measure averaged over records, with
//   P = LCS/|c|, R = LCS/|r|, F = (1 + beta^2) P R / (R + beta^2 P)
// and beta = 1.2 (the common captioning convention).
double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// Rule-based disease labeler: disease i is marked present iff keywords[i]
// occurs in the report outside a negation scope. A report with no tokens
// yields all-absent with a logged warning.
std::vector<int> label_report(const std::string& report,
                              const std::vector<std::string>& keywords);

// Micro-averaged precision/recall/F1 over individual binary decisions.
struct CeMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

CeMetrics ce_metrics(const std::vector<std::vector<int>>& predicted,
                     const std::vector<std::vector<int>>& truth);

struct MetricReport {
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double bleu3 = 0.0;
    double bleu4 = 0.0;
    double rouge = 0.0;
    CeMetrics ce;                         // micro-averaged over all (record, disease) decisions
    std::vector<CeMetrics> per_disease;   // one entry per keyword
    std::size_t records = 0;
};

// Full report card for generated texts against references: tokenizes both
// sides, computes BLEU-1..4 and ROUGE-L, then labels both sides with the
// keyword table and compares the label sets.
MetricReport evaluate_reports(const std::vector<std::string>& predicted,
                              const std::vector<std::string>& reference,
                              const std::vector<std::string>& keywords);

}  // namespace dart
