#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/tensor.hpp"

#include <filesystem>

using namespace chanrec;
using namespace chanrec::tensor;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape tape;
  Var eye = tape.leaf(Matrix::Identity(3, 3));
  Rng rng(1);
  Matrix a = random_matrix(3, 4, rng);
  Var av = tape.leaf(a);
  CHECK((tape.matmul(eye, av).value() - a).cwiseAbs().maxCoeff() == 0.0);

  Var two = tape.leaf(Matrix::Constant(1, 1, 2.0));
  Var three = tape.leaf(Matrix::Constant(1, 1, 3.0));
  CHECK(tape.matmul(two, three).value()(0, 0) == doctest::Approx(6.0));

  CHECK_THROWS_AS(tape.matmul(av, av), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(2);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  const Matrix w = random_matrix(3, 2, rng);  // reduce to scalar with fixed weights
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.matmul(p[0], p[1]), t.leaf(w)));
      },
      {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax values and stability") {
  Tape tape;
  Var flat = tape.softmax(tape.leaf((Matrix(1, 2) << 0.0, 0.0).finished()), 1);
  CHECK(flat.value()(0, 0) == doctest::Approx(0.5));
  CHECK(flat.value()(0, 1) == doctest::Approx(0.5));

  Var huge = tape.softmax(tape.leaf((Matrix(1, 2) << 1000.0, 0.0).finished()), 1);
  CHECK(huge.value()(0, 0) == doctest::Approx(1.0));
  CHECK(huge.value()(0, 1) == doctest::Approx(0.0));

  Rng rng(3);
  Var rows = tape.softmax(tape.leaf(random_matrix(5, 7, rng, 3.0)), 1);
  for (int r = 0; r < 5; ++r)
    CHECK(std::abs(rows.value().row(r).sum() - 1.0) < 1e-12);
  Var cols = tape.softmax(tape.leaf(random_matrix(5, 7, rng, 3.0)), 0);
  for (int c = 0; c < 7; ++c)
    CHECK(std::abs(cols.value().col(c).sum() - 1.0) < 1e-12);
}

TEST_CASE("softmax jacobian matches finite differences") {
  Rng rng(4);
  const Matrix x = random_matrix(2, 5, rng, 2.0);
  const Matrix w = random_matrix(2, 5, rng);
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.softmax(p[0], 1), t.leaf(w)));
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise op values") {
  Tape tape;
  Var zero = tape.leaf(Matrix::Zero(1, 1));
  CHECK(tape.tanh(zero).value()(0, 0) == 0.0);
  CHECK(tape.sigmoid(zero).value()(0, 0) == doctest::Approx(0.5));
  Var neg = tape.leaf(Matrix::Constant(1, 1, -1.0));
  CHECK(tape.relu(neg).value()(0, 0) == 0.0);

  Rng rng(5);
  Matrix x = random_matrix(3, 3, rng);
  Var xv = tape.leaf(x);
  Rng drop(1);
  CHECK((tape.dropout(xv, 0.0, drop, true).value() - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("elementwise gradients match finite differences") {
  Rng rng(6);
  const Matrix w = random_matrix(3, 4, rng);
  // offset inputs away from the relu kink
  Matrix x = random_matrix(3, 4, rng);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (std::abs(x(r, c)) < 0.05) x(r, c) += 0.1;

  for (const int which : {0, 1, 2}) {
    const double err = grad_check(
        [&w, which](Tape& t, const std::vector<Var>& p) {
          Var y = which == 0 ? t.tanh(p[0]) : which == 1 ? t.relu(p[0]) : t.sigmoid(p[0]);
          return t.sum(t.mul(y, t.leaf(w)));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("layer_norm matches finite differences") {
  Rng rng(7);
  const Matrix x = random_matrix(4, 6, rng, 2.0);
  const Matrix gain = random_matrix(1, 6, rng);
  const Matrix bias = random_matrix(1, 6, rng);
  const Matrix w = random_matrix(4, 6, rng);
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.layer_norm(p[0], p[1], p[2]), t.leaf(w)));
      },
      {x, gain, bias});
  CHECK(err < 1e-6);
}

TEST_CASE("concat, slice, broadcast and embedding gradients") {
  Rng rng(8);
  const Matrix a = random_matrix(3, 2, rng);
  const Matrix b = random_matrix(3, 4, rng);
  const Matrix w = random_matrix(3, 6, rng);
  const double err_concat = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.concat_cols({p[0], p[1]}), t.leaf(w)));
      },
      {a, b});
  CHECK(err_concat < 1e-6);

  const Matrix w2 = random_matrix(3, 2, rng);
  const double err_slice = grad_check(
      [&w2](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.slice_cols(p[0], 1, 2), t.leaf(w2)));
      },
      {b});
  CHECK(err_slice < 1e-6);

  const Matrix row = random_matrix(1, 4, rng);
  const Matrix w3 = random_matrix(3, 4, rng);
  const double err_bcast = grad_check(
      [&w3](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.add_row_broadcast(p[0], p[1]), t.leaf(w3)));
      },
      {b, row});
  CHECK(err_bcast < 1e-6);

  const Matrix table = random_matrix(5, 3, rng);
  const std::vector<int> ix = {4, 0, 0, 2};
  const Matrix w4 = random_matrix(4, 3, rng);
  const double err_embed = grad_check(
      [&w4, &ix](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.embedding_lookup(p[0], ix), t.leaf(w4)));
      },
      {table});
  CHECK(err_embed < 1e-6);
}

TEST_CASE("dropout with a fixed mask is differentiable") {
  Rng rng(9);
  const Matrix x = random_matrix(4, 4, rng);
  const Matrix w = random_matrix(4, 4, rng);
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        Rng mask_rng(123);  // same mask on every rebuild
        return t.sum(t.mul(t.dropout(p[0], 0.4, mask_rng, true), t.leaf(w)));
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("linear functions grad-check almost exactly") {
  Rng rng(10);
  const Matrix x = random_matrix(3, 3, rng);
  const Matrix w = random_matrix(3, 3, rng);
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) { return t.sum(t.mul(p[0], t.leaf(w))); }, {x});
  CHECK(err < 1e-10);
}

TEST_CASE("softmax-matmul chain matches finite differences") {
  Rng rng(11);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix w = random_matrix(3, 3, rng);
  const double err = grad_check(
      [&w](Tape& t, const std::vector<Var>& p) {
        return t.sum(t.mul(t.softmax(t.matmul(p[0], p[1]), 1), t.leaf(w)));
      },
      {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("bce_with_logits gradient and value") {
  Rng rng(12);
  const Matrix z = random_matrix(6, 1, rng, 3.0);
  Matrix y(6, 1);
  for (int r = 0; r < 6; ++r) y(r, 0) = r % 2;
  const double err = grad_check(
      [&y](Tape& t, const std::vector<Var>& p) { return t.bce_with_logits(p[0], y); }, {z});
  CHECK(err < 1e-6);

  // zero logits: loss is ln 2 regardless of labels
  Tape tape;
  Var loss = tape.bce_with_logits(tape.leaf(Matrix::Zero(4, 1)), Matrix::Ones(4, 1));
  CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Matrix p = Matrix::Constant(2, 2, 0.3);
  const Matrix before = p;
  AdamState state;
  adam_step({&p}, {Matrix::Zero(2, 2)}, state, AdamConfig{});
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam first step moves by lr times the gradient sign pattern") {
  Matrix p = Matrix::Zero(1, 3);
  Matrix g(1, 3);
  g << 0.5, -2.0, 1e-3;
  AdamState state;
  AdamConfig config;
  config.learning_rate = 0.01;
  adam_step({&p}, {g}, state, config);
  for (int c = 0; c < 3; ++c) {
    const double expected = -config.learning_rate * g(0, c) / (std::abs(g(0, c)) + config.epsilon);
    CHECK(p(0, c) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adam drives a quadratic bowl to its minimum") {
  // f(x) = sum (x - target)^2, analytic minimum at target
  Matrix target(1, 4);
  target << 0.3, -0.2, 0.15, 0.0;
  Matrix x = Matrix::Zero(1, 4);
  AdamState state;
  AdamConfig config;
  config.learning_rate = 0.01;
  for (int step = 0; step < 5000; ++step) {
    const Matrix g = 2.0 * (x - target);
    adam_step({&x}, {g}, state, config);
  }
  CHECK((x - target).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("checkpoints round-trip bit exactly") {
  namespace fs = std::filesystem;
  Rng rng(13);
  ParamStore store;
  store.add("alpha", random_matrix(3, 5, rng));
  store.add("beta", random_matrix(1, 1, rng));
  store.add("gamma.nested", random_matrix(7, 2, rng));
  const fs::path path = fs::temp_directory_path() / "chanrec_ckpt_test.bin";
  save_checkpoint(store, "{\"note\":42}", path);
  std::string meta;
  ParamStore back = load_checkpoint(path, &meta);
  CHECK(meta == "{\"note\":42}");
  REQUIRE(back.size() == store.size());
  for (std::size_t k = 0; k < store.size(); ++k) {
    CHECK(back.entries()[k].first == store.entries()[k].first);
    CHECK((back.entries()[k].second - store.entries()[k].second).cwiseAbs().maxCoeff() == 0.0);
  }
  fs::remove(path);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  Matrix bad(1, 1);
  bad << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(tape.leaf(bad), DataError);
}
