#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dart/matrix.hpp"

namespace dart {

// One paired training example: image views, free-text report, and the
// binary disease annotation the report is consistent with.
struct CorpusRecord {
    std::string id;
    std::vector<Matrix> views;  // 1..2 grids, h x w, values in [0, 1]
    std::string report;
    std::vector<int> diseases;  // 0/1 per disease, length d
};

// Derives the d x 2 one-hot annotation used by the classification loss:
// row i is [1, 0] when disease i is present, [0, 1] when absent.
Matrix disease_one_hot(const std::vector<int>& diseases);

// Disease keyword for index i (also the blob-location index). Throws when
// i exceeds the supported location count.
const std::vector<std::string>& disease_keywords();
std::size_t max_diseases();

// Synthetic corpus: every record's image blobs and report sentences are
// driven by the same disease vector, so the pairing is learnable by
// construction. Pure function of its arguments.
//  - each disease is present with probability 0.3
//  - each present disease stamps a Gaussian blob at its fixed grid
//    location with peak intensity in [0.6, 1.0]; sigma-0.05 pixel noise
//    is added to the whole view, then values are clamped to [0, 1]
//  - the report holds one positive sentence per present disease and up to
//    three negative sentences for sampled absent diseases, shuffled
std::vector<CorpusRecord> generate_corpus(std::uint64_t seed, std::size_t n, std::size_t d,
                                          std::size_t h, std::size_t w);

// JSONL persistence: one record per line. Loading validates every field
// and reports the first offending line number.
void save_jsonl(const std::vector<CorpusRecord>& records, const std::string& path);
std::vector<CorpusRecord> load_jsonl(const std::string& path);

// Deterministic 7:1:2 train/val/test assignment by record-id hash, for
// ingesting an externally supplied single-file corpus.
enum class Split { kTrain, kVal, kTest };
Split hash_split(const std::string& record_id);

// Token-level keyword detection with negation scope: true when `keyword`
// occurs in `report` outside the scope of a negation cue ("no",
// "without", "free of" — cue to end of sentence).
bool keyword_positive_in(const std::string& report, const std::string& keyword);

}  // namespace dart
