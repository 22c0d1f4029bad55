#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "dart/model_config.hpp"
#include "dart/param_vars.hpp"

namespace dart {

// One remembered training example: features are plain matrices, so queue
// contents can never be linked back into a gradient tape.
struct QueueEntry {
  std::uint64_t entry_id = 0;  // strictly increasing across pushes
  std::string record_id;       // source record, used for self-exclusion
  std::string report;
  Matrix text_features;   // d x e
  Matrix image_features;  // d x e (empty in a frozen index)
  Matrix annotation;      // d x 2 one-hot rows
};

// FIFO memory of recent batch features. capacity 0 disables the queue.
class TrainingQueue {
 public:
  explicit TrainingQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::string record_id, std::string report, Matrix text_features,
            Matrix image_features, Matrix annotation);
  std::vector<QueueEntry> snapshot() const { return {entries_.begin(), entries_.end()}; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t next_entry_id() const { return next_id_; }

 private:
  std::size_t capacity_;
  std::uint64_t next_id_ = 0;
  std::deque<QueueEntry> entries_;
};

inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 1.0;

// Creates the learnable temperature "align/tau" (1 x 1).
void init_alignment(ParamStore& store, const ModelConfig& cfg);

// Re-clamps tau into [kTauMin, kTauMax]; call after every optimizer step.
void clamp_tau(ParamStore& store);

// Symmetric contrastive loss over a batch of paired image/text features.
// Per pair: the positive Frobenius cosine competes against the other
// in-batch candidates and the queued ones, scaled by 1/tau; the two
// directions are averaged with weight 1/2, then the batch is averaged.
// Batch of one with an empty queue gives exactly 0.
Var contrastive_loss_tape(Tape& tape, const std::vector<Var>& image_features,
                          const std::vector<Var>& text_features,
                          const std::vector<QueueEntry>& queue_entries, Var tau);

double contrastive_loss(const std::vector<Matrix>& image_features,
                        const std::vector<Matrix>& text_features,
                        const std::vector<QueueEntry>& queue_entries, double tau);

}  // namespace dart
