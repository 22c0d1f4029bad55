#pragma once

#include "dart/model_config.hpp"
#include "dart/param_vars.hpp"
#include "dart/rng.hpp"

namespace dart {

// Disease classifier over image features and the disease-aware feature
// construction. The class embedding (2 x e, stored as "cls/phi") is
// shared between scoring and reconstruction: row 0 scores "present",
// row 1 "absent".

void init_disease(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Prediction: yhat = row_softmax(f_I . phi^T / sqrt(e)), one d x 2 row
// per disease on the simplex.
Var classify_tape(Tape& tape, Var f_i, Var phi, const ModelConfig& cfg);
Matrix classify(const Matrix& f_i, const Matrix& phi, const ModelConfig& cfg);

// Pre-softmax scores f_I . phi^T, for the fused classification loss.
Var classify_logits_tape(Tape& tape, Var f_i, Var phi);

// Mean over the d rows of CE(y, yhat), computed from the logits in fused
// form (identical value, stable gradient). y must be d x 2 one-hot rows.
Var classification_loss_tape(Tape& tape, Var logits, const Matrix& y, const ModelConfig& cfg);
double classification_loss(const Matrix& y, const Matrix& yhat);

// Disease-relevant features: f_D = yhat . phi + f_I.
Var disease_features_tape(Tape& tape, Var yhat, Var phi, Var f_i);
Matrix disease_features(const Matrix& yhat, const Matrix& phi, const Matrix& f_i);

// Per-row argmax of yhat expressed as a binary presence vector
// (column 0 = present wins ties).
std::vector<int> predicted_diseases(const Matrix& yhat);

}  // namespace dart
