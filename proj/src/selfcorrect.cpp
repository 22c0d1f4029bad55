#include "dart/selfcorrect.hpp"

#include <cmath>

#include "dart/encoders.hpp"
#include "dart/error.hpp"

namespace dart {

void init_selfcorrect(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  store.create_normal("cor/psi", 2, cfg.e, rng, kInitStddev);
}

void stage2_freeze(ParamStore& store) {
  store.freeze_all_except({"cor/psi"});
}

Var correct_tape(Tape& tape, Var f, Var psi, const ModelConfig& cfg, bool with_residual) {
  const Var weights = tape.row_softmax(tape.matmul(f, tape.transpose(psi)),
                                       std::sqrt(static_cast<double>(cfg.e)));
  const Var out = tape.matmul(weights, psi);
  return with_residual ? tape.add(out, f) : out;
}

Matrix correct(const Matrix& f, const Matrix& psi, const ModelConfig& cfg, bool with_residual) {
  Tape tape;
  return tape.value(
      correct_tape(tape, tape.constant(f), tape.constant(psi), cfg, with_residual));
}

Var correction_loss_tape(Tape& tape, Var f_star, const Matrix& f_i, bool* degenerate) {
  const Var cos = tape.cosine(f_star, tape.constant(f_i), degenerate);
  return tape.affine(cos, -1.0, 1.0);
}

double correction_loss(const Matrix& f_star, const Matrix& f_i, bool* degenerate) {
  Tape tape;
  return tape.value(correction_loss_tape(tape, tape.constant(f_star), f_i, degenerate)).at(0, 0);
}

double stage2_loss(double gen_loss, double cor_loss, double lambda_cor) {
  if (lambda_cor < 0.0) throw UsageError("correction weight must be nonnegative");
  return gen_loss + lambda_cor * cor_loss;
}

}  // namespace dart
