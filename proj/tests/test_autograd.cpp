#include <doctest.h>

#include <functional>

#include "helpers.hpp"
#include "lm2d/autograd.hpp"
#include "lm2d/skeleton.hpp"

using namespace lm2d;
using ag::Var;

namespace {

using Fn = std::function<Var(ag::Tape&, std::vector<Var>&)>;

double eval(const Fn& f, const std::vector<ag::Matrix>& inputs) {
  ag::Tape tape(false);
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  return f(tape, vars).scalar();
}

// Largest relative error between tape gradients and central differences.
double gradient_error(const Fn& f, std::vector<ag::Matrix> inputs, double h = 1e-6) {
  ag::Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const Var out = f(tape, vars);
  tape.backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ag::Matrix g = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k](i);
      inputs[k](i) = orig + h;
      const double up = eval(f, inputs);
      inputs[k](i) = orig - h;
      const double down = eval(f, inputs);
      inputs[k](i) = orig;
      const double fd = (up - down) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(g(i)), 1e-4});
      worst = std::max(worst, std::abs(fd - g(i)) / scale);
    }
  }
  return worst;
}

ag::Matrix rnd(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ag::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

}  // namespace

TEST_CASE("elementwise and matrix ops have correct gradients") {
  const auto a = rnd(4, 3, 1), b = rnd(3, 5, 2), c = rnd(4, 3, 3), row = rnd(1, 3, 4);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::mean_squares(ag::matmul(v[0], v[1])); }, {a, b}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::matmul_nt(v[0], v[1])); }, {a, c}) <
        1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::transpose(v[0])); }, {a}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::add(v[0], v[1])); }, {a, c}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::sub(v[0], v[1])); }, {a, c}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::add_row(v[0], v[1])); }, {a, row}) <
        1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::mul(v[0], v[1])); }, {a, c}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::scale(v[0], -2.5)); }, {a}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::silu(v[0])); }, {a}) < 1e-6);
}

TEST_CASE("normalization and attention building blocks have correct gradients") {
  const auto a = rnd(5, 4, 5), gain = rnd(1, 4, 6), bias = rnd(1, 4, 7), w = rnd(5, 4, 8);
  CHECK(gradient_error([&](ag::Tape& t, auto& v) { return ag::sum_squares(ag::mul(ag::softmax_rows(v[0]), t.constant(w))); },
                       {a}) < 1e-6);
  CHECK(gradient_error(
            [&](ag::Tape& t, auto& v) {
              return ag::sum_squares(ag::mul(ag::layer_norm(v[0], v[1], v[2]), t.constant(w)));
            },
            {a, gain, bias}) < 1e-5);
  CHECK(gradient_error([&](ag::Tape& t, auto& v) { return ag::sum_squares(ag::mul(ag::normalize_rows(v[0]), t.constant(w))); },
                       {a}) < 1e-6);
}

TEST_CASE("slicing, concatenation and shifts have correct gradients") {
  const auto a = rnd(5, 4, 9), b = rnd(5, 2, 10);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::slice_cols(v[0], 1, 2)); }, {a}) < 1e-6);
  CHECK(gradient_error(
            [](ag::Tape&, auto& v) {
              std::vector<Var> parts{v[0], v[1], v[0]};
              return ag::sum_squares(ag::concat_cols(parts));
            },
            {a, b}) < 1e-6);
  for (int k : {-2, 0, 1, 3})
    CHECK(gradient_error([k](ag::Tape&, auto& v) { return ag::sum_squares(ag::shift_rows(v[0], k)); }, {a}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::row_diff(v[0])); }, {a}) < 1e-6);
  CHECK(gradient_error([](ag::Tape&, auto& v) { return ag::sum_squares(ag::mean_rows(v[0])); }, {a}) < 1e-6);
}

TEST_CASE("shift_rows moves rows down with zero fill") {
  ag::Tape t(false);
  ag::Matrix a(3, 1);
  a << 1, 2, 3;
  const ag::Matrix s = ag::shift_rows(t.constant(a), 1).value();
  CHECK(s(0, 0) == 0.0);
  CHECK(s(1, 0) == 1.0);
  CHECK(s(2, 0) == 2.0);
}

TEST_CASE("cross entropy gradient") {
  const auto logits = rnd(4, 3, 11);
  const std::vector<int> targets{0, 2, 1, 2};
  CHECK(gradient_error([&](ag::Tape&, auto& v) { return ag::cross_entropy_rows(v[0], targets); }, {logits}) < 1e-6);
  ag::Tape t(false);
  ag::Matrix uniform = ag::Matrix::Zero(2, 4);
  CHECK(ag::cross_entropy_rows(t.constant(uniform), std::vector<int>{1, 3}).scalar() ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("forward kinematics op gradient") {
  std::mt19937_64 rng(12);
  ag::Matrix poses(2, kPoseDim);
  for (int i = 0; i < 2; ++i) {
    const auto p = test::random_pose(rng);
    for (int k = 0; k < kPoseDim; ++k) poses(i, k) = p[k];
  }
  // Perturb the 6D entries off the orthonormal manifold so the Gram-Schmidt
  // Jacobian is exercised in general position.
  poses += 0.1 * rnd(2, kPoseDim, 13);
  const auto w = rnd(2, kPositionDim, 14);
  const Skeleton& s = Skeleton::canonical();
  // FK values are O(1) and sums of many terms; a larger step keeps round-off
  // below truncation error.
  CHECK(gradient_error(
            [&](ag::Tape& t, auto& v) {
              return ag::sum_squares(ag::mul(ag::forward_kinematics(v[0], s), t.constant(w)));
            },
            {poses}, 1e-4) < 1e-5);
}

TEST_CASE("gradients accumulate over shared inputs") {
  ag::Tape t;
  ag::Matrix a(1, 1);
  a << 3.0;
  Var x = t.variable(a);
  Var y = ag::add(ag::mul(x, x), ag::scale(x, 2.0));  // x^2 + 2x
  t.backward(ag::sum_squares(y));                     // d/dx (x^2+2x)^2 = 2(x^2+2x)(2x+2)
  CHECK(t.grad(x)(0, 0) == doctest::Approx(2 * 15 * 8));
}

TEST_CASE("parameter binding collects a flat gradient") {
  ag::ParameterSet ps;
  const int w = ps.add("w", 2, 2);
  const int b = ps.add("b", 1, 2);
  ps.values().setConstant(1.0);
  ag::Tape t;
  ag::ParamBinding p(t, ps, true);
  ag::Matrix x(1, 2);
  x << 1.0, 2.0;
  Var out = ag::sum_squares(ag::add_row(ag::matmul(t.constant(x), p[w]), p[b]));
  t.backward(out);
  const Eigen::VectorXd g = p.gradient();
  REQUIRE(g.size() == 6);
  // y = x W + b = (4, 4); dL/dy = 2y = (8, 8); dL/dW = x^T dL/dy.
  CHECK(g(0) == doctest::Approx(8.0));
  CHECK(g(1) == doctest::Approx(16.0));
  CHECK(g(4) == doctest::Approx(8.0));
  CHECK(g(5) == doctest::Approx(8.0));
}
