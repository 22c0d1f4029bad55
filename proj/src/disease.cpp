#include "dart/disease.hpp"

#include <cmath>

#include "dart/encoders.hpp"
#include "dart/error.hpp"

namespace dart {

void init_disease(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  store.create_normal("cls/phi", 2, cfg.e, rng, kInitStddev);
}

Var classify_tape(Tape& tape, Var f_i, Var phi, const ModelConfig& cfg) {
  Var logits = classify_logits_tape(tape, f_i, phi);
  return tape.row_softmax(logits, std::sqrt(static_cast<double>(cfg.e)));
}

Matrix classify(const Matrix& f_i, const Matrix& phi, const ModelConfig& cfg) {
  Tape tape;
  Var fi = tape.constant(f_i);
  Var ph = tape.constant(phi);
  return tape.value(classify_tape(tape, fi, ph, cfg));
}

Var classify_logits_tape(Tape& tape, Var f_i, Var phi) {
  return tape.matmul(f_i, tape.transpose(phi));
}

Var classification_loss_tape(Tape& tape, Var logits, const Matrix& y, const ModelConfig& cfg) {
  return tape.softmax_cross_entropy(logits, one_hot_to_indices(y),
                                    std::sqrt(static_cast<double>(cfg.e)),
                                    /*sum_reduction=*/false);
}

double classification_loss(const Matrix& y, const Matrix& yhat) {
  return cross_entropy_rows(y, yhat);
}

Var disease_features_tape(Tape& tape, Var yhat, Var phi, Var f_i) {
  return tape.add(tape.matmul(yhat, phi), f_i);
}

Matrix disease_features(const Matrix& yhat, const Matrix& phi, const Matrix& f_i) {
  return add(matmul(yhat, phi), f_i);
}

std::vector<int> predicted_diseases(const Matrix& yhat) {
  if (yhat.cols() != 2) {
    throw DimensionError("predicted_diseases expects d x 2 probabilities, got " + yhat.shape_str());
  }
  std::vector<int> out(yhat.rows());
  for (std::size_t i = 0; i < yhat.rows(); ++i) {
    out[i] = yhat.at(i, 0) >= yhat.at(i, 1) ? 1 : 0;
  }
  return out;
}

}  // namespace dart
