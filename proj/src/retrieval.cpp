#include "dart/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "dart/bytes.hpp"
#include "dart/error.hpp"
#include "dart/rng.hpp"

namespace dart {

std::vector<RetrievalHit> topk(const Matrix& image_features,
                               const std::vector<QueueEntry>& source, std::size_t k,
                               const std::string& exclude_record_id) {
  std::vector<std::size_t> candidates;
  candidates.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].record_id != exclude_record_id) candidates.push_back(i);
  }
  if (candidates.size() < k) {
    throw DataError("top-" + std::to_string(k) + " retrieval has only " +
                    std::to_string(candidates.size()) + " candidates after excluding \"" +
                    exclude_record_id + "\" (source size " + std::to_string(source.size()) + ")");
  }
  std::vector<double> sims(source.size(), 0.0);
  for (std::size_t i : candidates) {
    sims[i] = cosine_similarity(image_features, source[i].text_features);
  }
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return source[a].entry_id < source[b].entry_id;
  });
  std::vector<RetrievalHit> hits;
  hits.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const QueueEntry& entry = source[candidates[r]];
    RetrievalHit hit;
    hit.entry_id = entry.entry_id;
    hit.record_id = entry.record_id;
    hit.report = entry.report;
    hit.similarity = sims[candidates[r]];
    hit.text_features = entry.text_features;
    hit.annotation = entry.annotation;
    hits.push_back(std::move(hit));
  }
  return hits;
}

double disease_match_gamma(const Matrix& y, const std::vector<RetrievalHit>& hits) {
  if (hits.empty()) throw InvariantError("disease match needs at least one hit");
  double total = 0.0;
  for (const RetrievalHit& hit : hits) total += cross_entropy_rows(y, hit.annotation);
  return total / static_cast<double>(hits.size());
}

Var disease_match_surrogate_tape(Tape& tape, Var image_features,
                                 const std::vector<RetrievalHit>& hits, const Matrix& y,
                                 double tau_value) {
  if (hits.empty()) throw InvariantError("disease match needs at least one hit");
  Matrix ce(1, hits.size());
  std::vector<Var> sims;
  sims.reserve(hits.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    ce.at(0, i) = cross_entropy_rows(y, hits[i].annotation);
    sims.push_back(tape.cosine(image_features, tape.constant(hits[i].text_features)));
  }
  Var sim_row = sims.size() == 1 ? sims[0] : tape.concat_cols(sims);
  Var weights = tape.row_softmax(sim_row, tau_value);
  return tape.dot(weights, tape.constant(ce));
}

namespace {

constexpr char kIndexMagic[8] = {'D', 'A', 'R', 'T', 'I', 'D', 'X', '\0'};
constexpr std::uint64_t kIndexVersion = 1;

std::string serialize_index(const std::vector<QueueEntry>& entries, std::size_t d, std::size_t e) {
  std::string out(kIndexMagic, sizeof(kIndexMagic));
  append_u64_le(out, kIndexVersion);
  append_u64_le(out, d);
  append_u64_le(out, e);
  append_u64_le(out, entries.size());
  for (const QueueEntry& entry : entries) {
    append_u64_le(out, entry.entry_id);
    append_str(out, entry.record_id);
    append_str(out, entry.report);
    append_matrix(out, entry.text_features);
    append_matrix(out, entry.annotation);
  }
  return out;
}

}  // namespace

FrozenIndex FrozenIndex::build(std::vector<QueueEntry> entries, std::size_t d, std::size_t e) {
  if (entries.empty()) throw DataError("frozen index needs at least one entry");
  std::uint64_t prev_id = 0;
  bool first = true;
  for (QueueEntry& entry : entries) {
    if (!first && entry.entry_id <= prev_id) {
      throw InvariantError("frozen index entry ids must be strictly increasing");
    }
    prev_id = entry.entry_id;
    first = false;
    if (entry.text_features.rows() != d || entry.text_features.cols() != e) {
      throw DimensionError("frozen index entry " + entry.record_id + " text features " +
                           entry.text_features.shape_str() + ", want " + std::to_string(d) + "x" +
                           std::to_string(e));
    }
    if (entry.annotation.rows() != d || entry.annotation.cols() != 2) {
      throw DimensionError("frozen index entry " + entry.record_id + " annotation " +
                           entry.annotation.shape_str() + ", want " + std::to_string(d) + "x2");
    }
    if (!entry.text_features.all_finite()) {
      throw InvariantError("frozen index entry " + entry.record_id + " has non-finite features");
    }
    one_hot_to_indices(entry.annotation);
    entry.image_features = Matrix();  // not stored; nothing at inference reads them
  }
  FrozenIndex index;
  index.d_ = d;
  index.e_ = e;
  index.hash_ = fnv1a64(serialize_index(entries, d, e));
  index.entries_ = std::move(entries);
  return index;
}

void FrozenIndex::save(const std::string& path) const {
  std::string payload = serialize_index(entries_, d_, e_);
  append_u64_le(payload, hash_);
  write_file_atomic(path, payload);
}

FrozenIndex FrozenIndex::load(const std::string& path) {
  const std::string buf = read_file_bytes(path, "frozen index");
  if (buf.size() < sizeof(kIndexMagic) + 8) throw DataError("frozen index " + path + " too short");
  if (std::memcmp(buf.data(), kIndexMagic, sizeof(kIndexMagic)) != 0) {
    throw DataError("frozen index " + path + " has wrong magic");
  }
  const std::string payload = buf.substr(0, buf.size() - 8);
  ByteReader trailer(buf, buf.size() - 8, "frozen index");
  const std::uint64_t stored_hash = trailer.u64();
  if (fnv1a64(payload) != stored_hash) {
    throw DataError("frozen index " + path + " failed its content-hash check");
  }
  ByteReader r(payload, sizeof(kIndexMagic), "frozen index");
  const std::uint64_t version = r.u64();
  if (version != kIndexVersion) {
    throw DataError("frozen index " + path + " has unsupported version " + std::to_string(version));
  }
  FrozenIndex index;
  index.d_ = r.u64();
  index.e_ = r.u64();
  const std::uint64_t count = r.u64();
  index.entries_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    QueueEntry entry;
    entry.entry_id = r.u64();
    entry.record_id = r.str();
    entry.report = r.str();
    entry.text_features = r.matrix(index.d_, index.e_);
    entry.annotation = r.matrix(index.d_, 2);
    index.entries_.push_back(std::move(entry));
  }
  if (r.pos() != payload.size()) {
    throw DataError("frozen index " + path + " has trailing bytes");
  }
  index.hash_ = stored_hash;
  return index;
}

}  // namespace dart
