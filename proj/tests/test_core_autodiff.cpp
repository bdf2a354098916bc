#include "doctest.h"
#include "survgrad/dense_net.hpp"
#include "survgrad/error.hpp"
#include "survgrad/matrix.hpp"
#include "test_support.hpp"

using namespace survgrad;
using survgrad::testing::random_matrix;

namespace {

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

// Sum of upstream .* output, the scalar whose gradient backward() returns.
double weighted_output(const DenseNet& net, const Matrix& X, const Matrix& upstream) {
  const Matrix y = predict(net, X);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * upstream.values()[i];
  return s;
}

}  // namespace

TEST_CASE("kernels match naive products on ragged shapes") {
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {7, 5, 3}, {37, 33, 9}, {300, 260, 13}, {5, 1, 70}}) {
    const Matrix a = random_matrix(n, k, 1 + n), b = random_matrix(k, m, 2 + m);
    Matrix out;
    matmul(a, b, out);
    const Matrix ref = naive_product(a, b);
    CHECK(testing::max_abs_difference(out.values(), ref.values()) < 1e-10);

    Matrix out_t;
    matmul_transposed(a, transpose(b), out_t);
    CHECK(testing::max_abs_difference(out_t.values(), ref.values()) < 1e-10);

    Matrix acc(n, m, 1.0);
    accumulate_transposed_product(transpose(a), b, acc);
    for (std::size_t i = 0; i < acc.size(); ++i) acc.values()[i] -= 1.0;
    CHECK(testing::max_abs_difference(acc.values(), naive_product(a, b).values()) < 1e-10);
  }
}

TEST_CASE("kernels reject mismatched shapes") {
  Matrix out;
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3), out), ShapeError);
  CHECK_THROWS_AS(matmul_transposed(Matrix(2, 3), Matrix(2, 4), out), ShapeError);
}

TEST_CASE("an identity network reproduces its affine map") {
  DenseLayer layer;
  layer.weight = Matrix::from_rows({{2.0, -1.0}});
  layer.bias = {0.5};
  DenseNet net({layer}, 0.0);
  const Matrix y = predict(net, Matrix::from_rows({{1.0, 3.0}, {0.0, 0.0}}));
  CHECK(y(0, 0) == doctest::Approx(-0.5));
  CHECK(y(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("backward matches central differences for parameters and inputs") {
  for (Activation act : {Activation::tanh, Activation::relu}) {
    const std::vector<std::size_t> widths{4, 6, 5, 3};
    DenseNet net = DenseNet::initialize(widths, act, 0.0, 7);
    const Matrix X = random_matrix(9, 4, 3);
    const Matrix up = random_matrix(9, 3, 4);
    const auto fwd = forward(net, X);
    const Gradients g = backward(net, fwd.tape, up, true, true);
    const double h = 1e-6;

    for (std::size_t i = 0; i < X.size(); ++i) {
      Matrix a = X, b = X;
      a.values()[i] += h;
      b.values()[i] -= h;
      const double fd = (weighted_output(net, a, up) - weighted_output(net, b, up)) / (2 * h);
      CHECK(g.inputs.values()[i] == doctest::Approx(fd).epsilon(1e-6));
    }
    for (std::size_t l = 0; l < net.depth(); ++l) {
      for (std::size_t i = 0; i < net.layers()[l].weight.size(); ++i) {
        DenseNet a = net, b = net;
        a.layers()[l].weight.values()[i] += h;
        b.layers()[l].weight.values()[i] -= h;
        const double fd = (weighted_output(a, X, up) - weighted_output(b, X, up)) / (2 * h);
        CHECK(g.params.weight[l].values()[i] == doctest::Approx(fd).epsilon(1e-6));
      }
      for (std::size_t i = 0; i < net.layers()[l].bias.size(); ++i) {
        DenseNet a = net, b = net;
        a.layers()[l].bias[i] += h;
        b.layers()[l].bias[i] -= h;
        const double fd = (weighted_output(a, X, up) - weighted_output(b, X, up)) / (2 * h);
        CHECK(g.params.bias[l][i] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("dropout keeps about the requested fraction and is seeded") {
  const std::vector<std::size_t> widths{3, 400, 1};
  DenseNet net = DenseNet::initialize(widths, Activation::relu, 0.25, 1);
  const Matrix X = random_matrix(50, 3, 2);
  Rng r1(9), r2(9);
  const auto a = forward(net, X, Mode::train, r1);
  const auto b = forward(net, X, Mode::train, r2);
  CHECK(a.output.storage() == b.output.storage());
  const auto& mask = a.tape.masks[0];
  double kept = 0.0;
  for (double v : mask.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    kept += v > 0.0 ? 1.0 : 0.0;
  }
  CHECK(kept / static_cast<double>(mask.size()) == doctest::Approx(0.75).epsilon(0.03));
  // Eval mode ignores dropout entirely.
  const auto e = forward(net, X);
  CHECK(e.tape.masks[0].empty());
  CHECK(e.output.storage() == predict(net, X).storage());
}

TEST_CASE("backward through a dropout tape matches differences at the fixed mask") {
  const std::vector<std::size_t> widths{2, 8, 1};
  DenseNet net = DenseNet::initialize(widths, Activation::tanh, 0.3, 5);
  const Matrix X = random_matrix(6, 2, 8);
  Rng rng(4);
  const auto fwd = forward(net, X, Mode::train, rng);
  const Matrix up(6, 1, 1.0);
  const Matrix gin = backward_inputs(net, fwd.tape, up);
  const double h = 1e-6;
  for (std::size_t i = 0; i < X.size(); ++i) {
    Matrix a = X, b = X;
    a.values()[i] += h;
    b.values()[i] -= h;
    Rng ra(4), rb(4);
    const auto fa = forward(net, a, Mode::train, ra);
    const auto fb = forward(net, b, Mode::train, rb);
    double sa = 0.0, sb = 0.0;
    for (double v : fa.output.values()) sa += v;
    for (double v : fb.output.values()) sb += v;
    CHECK(gin.values()[i] == doctest::Approx((sa - sb) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("adam drives a linear least-squares fit to the target") {
  DenseLayer layer;
  layer.weight = Matrix(1, 2);
  layer.bias = {0.0};
  DenseNet net({layer}, 0.0);
  const Matrix X = random_matrix(64, 2, 11);
  Matrix y(64, 1);
  for (std::size_t i = 0; i < 64; ++i) y(i, 0) = 3.0 * X(i, 0) - 2.0 * X(i, 1) + 1.0;
  AdamState state = AdamState::for_net(net);
  for (int step = 0; step < 2000; ++step) {
    const auto fwd = forward(net, X);
    Matrix up(64, 1);
    for (std::size_t i = 0; i < 64; ++i) up(i, 0) = (fwd.output(i, 0) - y(i, 0)) / 64.0;
    adam_step(net, backward_params(net, fwd.tape, up), state, 0.05);
  }
  CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(net.layers()[0].weight(0, 1) == doctest::Approx(-2.0).epsilon(1e-3));
  CHECK(net.layers()[0].bias[0] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("network JSON round trip is exact") {
  const std::vector<std::size_t> widths{3, 5, 2};
  const DenseNet net = DenseNet::initialize(widths, Activation::tanh, 0.1, 3);
  const DenseNet back = dense_net_from_json(nlohmann::json::parse(to_json(net).dump()));
  const Matrix X = random_matrix(4, 3, 1);
  CHECK(predict(net, X).storage() == predict(back, X).storage());
  CHECK(back.dropout_rate() == net.dropout_rate());
}

TEST_CASE("invalid networks are rejected") {
  CHECK_THROWS_AS(DenseNet({}, 1.0), ConfigError);
  const std::vector<std::size_t> widths{3, 2};
  const DenseNet net = DenseNet::initialize(widths, Activation::relu, 0.0, 1);
  CHECK_THROWS_AS(predict(net, Matrix(2, 4)), ShapeError);
  CHECK_THROWS_AS(predict(DenseNet(), Matrix(2, 4)), StateError);
}
