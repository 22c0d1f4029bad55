#include "dart/alignment.hpp"

#include <algorithm>

#include "dart/error.hpp"

namespace dart {

void TrainingQueue::push(std::string record_id, std::string report, Matrix text_features,
                         Matrix image_features, Matrix annotation) {
  if (!text_features.all_finite() || !image_features.all_finite()) {
    throw InvariantError("queue push rejects non-finite features (record " + record_id + ")");
  }
  if (text_features.rows() != image_features.rows() ||
      text_features.cols() != image_features.cols()) {
    throw DimensionError("queue push feature shape mismatch: text " + text_features.shape_str() +
                         " vs image " + image_features.shape_str());
  }
  QueueEntry entry;
  entry.entry_id = next_id_++;
  entry.record_id = std::move(record_id);
  entry.report = std::move(report);
  entry.text_features = std::move(text_features);
  entry.image_features = std::move(image_features);
  entry.annotation = std::move(annotation);
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) entries_.pop_front();
}

void init_alignment(ParamStore& store, const ModelConfig& cfg) {
  Matrix tau(1, 1);
  tau.at(0, 0) = cfg.tau_init;
  store.create("align/tau", 1, 1);
  store.set("align/tau", tau);
}

void clamp_tau(ParamStore& store) {
  Matrix tau = store.get("align/tau");
  tau.at(0, 0) = std::clamp(tau.at(0, 0), kTauMin, kTauMax);
  store.set("align/tau", tau);
}

namespace {

// -log softmax(candidates/tau) at the positive (index 0). candidates are
// 1x1 cosine vars, joined into one logit row.
Var direction_term(Tape& tape, std::vector<Var> candidates, Var tau) {
  Var row = candidates.size() == 1 ? candidates[0] : tape.concat_cols(candidates);
  return tape.neg_log_softmax_at(tape.div_by_scalar(row, tau), 0);
}

}  // namespace

Var contrastive_loss_tape(Tape& tape, const std::vector<Var>& image_features,
                          const std::vector<Var>& text_features,
                          const std::vector<QueueEntry>& queue_entries, Var tau) {
  if (image_features.empty() || image_features.size() != text_features.size()) {
    throw DimensionError("contrastive loss needs equal non-empty image/text batches, got " +
                         std::to_string(image_features.size()) + " and " +
                         std::to_string(text_features.size()));
  }
  const std::size_t batch = image_features.size();
  std::vector<Var> queue_text;
  std::vector<Var> queue_image;
  queue_text.reserve(queue_entries.size());
  queue_image.reserve(queue_entries.size());
  for (const QueueEntry& entry : queue_entries) {
    queue_text.push_back(tape.constant(entry.text_features));
    queue_image.push_back(tape.constant(entry.image_features));
  }

  std::vector<Var> per_pair;
  per_pair.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Var> i2t;
    i2t.push_back(tape.cosine(image_features[b], text_features[b]));
    for (std::size_t o = 0; o < batch; ++o) {
      if (o != b) i2t.push_back(tape.cosine(image_features[b], text_features[o]));
    }
    for (Var qt : queue_text) i2t.push_back(tape.cosine(image_features[b], qt));

    std::vector<Var> t2i;
    t2i.push_back(tape.cosine(text_features[b], image_features[b]));
    for (std::size_t o = 0; o < batch; ++o) {
      if (o != b) t2i.push_back(tape.cosine(text_features[b], image_features[o]));
    }
    for (Var qi : queue_image) t2i.push_back(tape.cosine(text_features[b], qi));

    Var pair = tape.add(direction_term(tape, std::move(i2t), tau),
                        direction_term(tape, std::move(t2i), tau));
    per_pair.push_back(tape.affine(pair, 0.5, 0.0));
  }
  Var total = per_pair.size() == 1 ? per_pair[0] : tape.add_list(per_pair);
  return tape.affine(total, 1.0 / static_cast<double>(batch), 0.0);
}

double contrastive_loss(const std::vector<Matrix>& image_features,
                        const std::vector<Matrix>& text_features,
                        const std::vector<QueueEntry>& queue_entries, double tau) {
  Tape tape;
  std::vector<Var> imgs;
  std::vector<Var> txts;
  imgs.reserve(image_features.size());
  txts.reserve(text_features.size());
  for (const Matrix& m : image_features) imgs.push_back(tape.constant(m));
  for (const Matrix& m : text_features) txts.push_back(tape.constant(m));
  Matrix tau_m(1, 1);
  tau_m.at(0, 0) = tau;
  Var loss = contrastive_loss_tape(tape, imgs, txts, queue_entries, tape.constant(tau_m));
  return tape.value(loss).at(0, 0);
}

}  // namespace dart
