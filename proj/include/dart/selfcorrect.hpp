#pragma once

#include "dart/model_config.hpp"
#include "dart/param_vars.hpp"
#include "dart/rng.hpp"

namespace dart {

// Second-stage re-alignment of generated-report features. The correction
// embedding ("cor/psi", 2 x e) is the only parameter group that trains in
// stage 2; everything else is frozen at its stage-1 value.

void init_selfcorrect(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Marks every parameter except cor/psi non-trainable.
void stage2_freeze(ParamStore& store);

// f* = row_softmax(f . psi^T, sqrt(e)) . psi. Each output row is a convex
// combination of psi's two rows — deliberately no residual term.
// with_residual adds f back for the experimentation flag.
Var correct_tape(Tape& tape, Var f, Var psi, const ModelConfig& cfg, bool with_residual = false);
Matrix correct(const Matrix& f, const Matrix& psi, const ModelConfig& cfg,
               bool with_residual = false);

// 1 - Frobenius cosine against detached image features; range [0, 2].
// A zero-norm input gives loss exactly 1 and sets *degenerate.
Var correction_loss_tape(Tape& tape, Var f_star, const Matrix& f_i, bool* degenerate = nullptr);
double correction_loss(const Matrix& f_star, const Matrix& f_i, bool* degenerate = nullptr);

// L_gen + lambda_cor * L_cor.
double stage2_loss(double gen_loss, double cor_loss, double lambda_cor);

}  // namespace dart
