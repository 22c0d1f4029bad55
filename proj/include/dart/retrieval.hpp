#pragma once

#include "dart/alignment.hpp"

namespace dart {

struct RetrievalHit {
  std::uint64_t entry_id = 0;
  std::string record_id;
  std::string report;
  double similarity = 0.0;  // Frobenius cosine, in [-1, 1]
  Matrix text_features;     // d x e
  Matrix annotation;        // d x 2 one-hot rows
};

// Exact top-k by Frobenius cosine between the query image features and each
// stored text feature. Sorted by similarity descending, ties by ascending
// entry_id; entries whose record_id equals exclude_record_id never appear.
// Throws when fewer than k candidates remain after exclusion.
std::vector<RetrievalHit> topk(const Matrix& image_features,
                               const std::vector<QueueEntry>& source, std::size_t k,
                               const std::string& exclude_record_id);

// Disease-matching constraint: mean over hits of the per-row-mean
// cross-entropy between the query annotation y and each hit's annotation.
// Zero (up to clipping) exactly when every hit matches y.
double disease_match_gamma(const Matrix& y, const std::vector<RetrievalHit>& hits);

// Differentiable training surrogate: the same per-hit cross-entropies
// (constants) reweighted by softmax(sim(f_I, hit)/tau) so gradients reach
// the image encoder. Equals disease_match_gamma when all similarities tie.
// tau enters as a detached value.
Var disease_match_surrogate_tape(Tape& tape, Var image_features,
                                 const std::vector<RetrievalHit>& hits, const Matrix& y,
                                 double tau_value);

// Immutable retrieval source built from a full training split. Entries keep
// empty image features (nothing at inference reads them). The content hash
// covers every stored byte and is stable across save/load.
class FrozenIndex {
 public:
  static FrozenIndex build(std::vector<QueueEntry> entries, std::size_t d, std::size_t e);
  static FrozenIndex load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<QueueEntry>& entries() const { return entries_; }
  std::uint64_t content_hash() const { return hash_; }
  std::size_t d() const { return d_; }
  std::size_t e() const { return e_; }

 private:
  FrozenIndex() = default;

  std::vector<QueueEntry> entries_;
  std::size_t d_ = 0;
  std::size_t e_ = 0;
  std::uint64_t hash_ = 0;
};

}  // namespace dart
