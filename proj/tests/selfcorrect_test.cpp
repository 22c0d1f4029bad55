#include <cmath>
#include <vector>

#include "dart/adamw.hpp"
#include "dart/error.hpp"
#include "dart/generator.hpp"
#include "dart/gradcheck.hpp"
#include "dart/selfcorrect.hpp"
#include "dart/tokenizer.hpp"
#include "doctest.h"

using namespace dart;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("scalar correction evaluates to (2/3) ln 2") {
  ModelConfig cfg;
  cfg.d = 1;
  cfg.e = 1;
  Matrix f{{1.0}};
  Matrix psi{{std::log(2.0)}, {0.0}};
  Matrix out = correct(f, psi, cfg);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 1);
  CHECK(std::abs(out.at(0, 0) - (2.0 / 3.0) * std::log(2.0)) <= 1e-12);
  CHECK(std::abs(out.at(0, 0) - 0.4621) <= 5e-5);
}

TEST_CASE("a row orthogonal to both correction rows maps to their midpoint") {
  ModelConfig cfg;
  cfg.d = 1;
  cfg.e = 4;
  Matrix f{{0.0, 0.0, 0.0, 2.0}};
  Matrix psi{{1.0, -1.0, 0.5, 0.0}, {2.0, 3.0, -1.0, 0.0}};
  Matrix out = correct(f, psi, cfg);
  for (std::size_t c = 0; c < cfg.e; ++c) {
    CHECK(std::abs(out.at(0, c) - 0.5 * (psi.at(0, c) + psi.at(1, c))) <= 1e-15);
  }
}

TEST_CASE("every corrected row is a convex combination of the two correction rows") {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.e = 6;
  Rng rng(7);
  Matrix f = random_matrix(cfg.d, cfg.e, rng);
  Matrix psi = random_matrix(2, cfg.e, rng);
  Matrix weights = row_softmax(matmul(f, transpose(psi)), std::sqrt(static_cast<double>(cfg.e)));
  Matrix out = correct(f, psi, cfg);
  for (std::size_t r = 0; r < cfg.d; ++r) {
    double a = weights.at(r, 0);
    double b = weights.at(r, 1);
    CHECK(a > 0.0);
    CHECK(b > 0.0);
    CHECK(std::abs(a + b - 1.0) <= 1e-12);
    for (std::size_t c = 0; c < cfg.e; ++c) {
      CHECK(std::abs(out.at(r, c) - (a * psi.at(0, c) + b * psi.at(1, c))) <= 1e-12);
    }
  }
  // no hidden residual: zero psi collapses everything to zero, not to f
  CHECK(max_abs_diff(correct(f, Matrix(2, cfg.e, 0.0), cfg), Matrix(cfg.d, cfg.e, 0.0)) == 0.0);
  // the experimentation flag restores the additive path
  CHECK(max_abs_diff(correct(f, Matrix(2, cfg.e, 0.0), cfg, /*with_residual=*/true), f) == 0.0);
}

TEST_CASE("correction loss spans [0, 2] with the documented anchor points") {
  Rng rng(11);
  Matrix f_i = random_matrix(2, 4, rng);
  CHECK(correction_loss(f_i, f_i) <= 1e-12);
  CHECK(std::abs(correction_loss(scale(f_i, -1.0), f_i) - 2.0) <= 1e-12);

  Matrix a{{1.0, 0.0}, {0.0, 0.0}};
  Matrix b{{0.0, 1.0}, {0.0, 0.0}};
  CHECK(correction_loss(a, b) == 1.0);

  for (int trial = 0; trial < 20; ++trial) {
    double loss = correction_loss(random_matrix(2, 4, rng), random_matrix(2, 4, rng));
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);
  }
}

TEST_CASE("zero-norm corrected features give loss one and raise the degenerate flag") {
  Rng rng(13);
  Matrix f_i = random_matrix(2, 4, rng);
  bool degenerate = false;
  CHECK(correction_loss(Matrix(2, 4, 0.0), f_i, &degenerate) == 1.0);
  CHECK(degenerate);
}

TEST_CASE("stage-2 composite weighs the correction term") {
  CHECK(std::abs(stage2_loss(0.7, 0.1, 5.0) - 1.2) <= 1e-12);
  CHECK(stage2_loss(0.37, 1.9, 0.0) == 0.37);
  CHECK(stage2_loss(0.0, 0.0, 5.0) == 0.0);
  CHECK_THROWS_AS(stage2_loss(0.1, 0.1, -1.0), UsageError);
}

TEST_CASE("stage-2 freeze leaves only the correction embedding trainable") {
  ModelConfig cfg;
  cfg.d = 2;
  cfg.e = 8;
  cfg.heads = 2;
  cfg.dec_blocks = 1;
  cfg.max_len = 8;
  cfg.vocab_size = 10;
  ParamStore store;
  Rng rng(17);
  init_generator(store, cfg, rng);
  init_selfcorrect(store, cfg, rng);
  stage2_freeze(store);
  for (const auto& [name, value] : store.all()) {
    (void)value;
    CHECK(store.trainable(name) == (name == "cor/psi"));
  }
}

TEST_CASE("the full stage-2 loss gradient w.r.t. the correction embedding is exact") {
  ModelConfig cfg;
  cfg.d = 2;
  cfg.e = 8;
  cfg.heads = 2;
  cfg.dec_blocks = 1;
  cfg.max_len = 8;
  cfg.vocab_size = 10;
  ParamStore store;
  Rng rng(19);
  init_generator(store, cfg, rng);
  init_selfcorrect(store, cfg, rng);
  stage2_freeze(store);

  Rng rng2(23);
  Matrix f_d = random_matrix(cfg.d, cfg.e, rng2);
  Matrix f_that = random_matrix(cfg.d, cfg.e, rng2);  // stage-1 report features
  Matrix f_i = random_matrix(cfg.d, cfg.e, rng2);
  Matrix retrieved = random_matrix(cfg.d, cfg.e, rng2);
  std::vector<std::size_t> target{Vocabulary::kBos, 4, 7, Vocabulary::kEos};
  const double lambda_cor = 5.0;

  auto build = [&](Tape& tape, const ParamVars& pv) {
    Var f_star = correct_tape(tape, tape.constant(f_that), pv["cor/psi"], cfg);
    Var memory = bundle_memory_tape(tape, pv, tape.constant(f_d), f_star,
                                    {tape.constant(retrieved)});
    Var gen = generation_loss_tape(tape, pv, memory, target, cfg);
    Var cor = correction_loss_tape(tape, f_star, f_i);
    return tape.add(gen, tape.affine(cor, lambda_cor, 0.0));
  };
  Tape tape;
  ParamVars pv(tape, store);
  Var loss = build(tape, pv);
  tape.backward(loss);
  GradMap grads = pv.collect_grads();
  CHECK(grads.size() == 1);  // frozen groups are constants: psi only
  REQUIRE(grads.count("cor/psi") == 1);

  auto loss_fn = [&](const ParamStore& s) {
    Tape t;
    ParamVars p(t, s, /*all_constant=*/true);
    return t.value(build(t, p)).at(0, 0);
  };
  GradCheckReport report = check_gradients(store, loss_fn, grads, 1e-5);
  INFO("worst ", report.worst_param, " rel err ", report.max_rel_err);
  CHECK(report.flagged_non_finite == 0);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("an optimizer step after stage-2 freeze moves psi and nothing else") {
  ModelConfig cfg;
  cfg.d = 2;
  cfg.e = 8;
  cfg.heads = 2;
  cfg.dec_blocks = 1;
  cfg.max_len = 8;
  cfg.vocab_size = 10;
  ParamStore store;
  Rng rng(29);
  init_generator(store, cfg, rng);
  init_selfcorrect(store, cfg, rng);
  stage2_freeze(store);

  std::map<std::string, std::vector<double>> before;
  for (const auto& [name, value] : store.all()) before[name] = value.flat();

  Rng rng2(31);
  Matrix f_that = random_matrix(cfg.d, cfg.e, rng2);
  Matrix f_i = random_matrix(cfg.d, cfg.e, rng2);
  Tape tape;
  ParamVars pv(tape, store);
  Var f_star = correct_tape(tape, tape.constant(f_that), pv["cor/psi"], cfg);
  Var loss = correction_loss_tape(tape, f_star, f_i);
  tape.backward(loss);
  AdamW adam{AdamWConfig{}};
  adam.step(store, pv.collect_grads());

  for (const auto& [name, value] : store.all()) {
    if (name == "cor/psi") {
      CHECK(value.flat() != before[name]);
    } else {
      CHECK(value.flat() == before[name]);
    }
  }
}
