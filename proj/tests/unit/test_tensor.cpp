#include <cmath>
#include <random>
#include <string>

#include "atnb/error.hpp"
#include "atnb/tensor.hpp"
#include "doctest.h"
#include "oracle.hpp"

using atnb::Matrix;

TEST_SUITE("tensor") {

TEST_CASE("matmul matches the 2x2 hand result") {
  const Matrix c = atnb::matmul(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{5, 6}, {7, 8}}));
  CHECK(c == Matrix::from_rows({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul with transposed right operand") {
  const Matrix a = Matrix::from_rows({{1, 2, 3}});
  const Matrix b = Matrix::from_rows({{1, 0, 1}, {2, 2, 2}});
  CHECK(atnb::matmul(a, b, true) == Matrix::from_rows({{4, 12}}));
}

TEST_CASE("matmul agrees with the triple loop on awkward shapes") {
  std::mt19937_64 rng(11);
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {5, 7, 3}, {13, 64, 33}, {97, 40, 65}, {200, 17, 130}}) {
    const Matrix a = oracle::random(n, k, rng);
    const Matrix b = oracle::random(k, m, rng);
    CHECK(oracle::relative_error(atnb::matmul(a, b), oracle::matmul(oracle::to_grid(a), oracle::to_grid(b))) <
          1e-6);
    Matrix bt(m, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < m; ++j) bt(j, i) = b(i, j);
    CHECK(oracle::relative_error(atnb::matmul(a, bt, true), atnb::matmul(a, b)) < 1e-6);
  }
}

TEST_CASE("matmul result does not depend on the worker count") {
  std::mt19937_64 rng(5);
  const Matrix a = oracle::random(301, 96, rng);
  const Matrix b = oracle::random(96, 70, rng);
  const Matrix one = atnb::matmul(a, b, false, 1);
  CHECK(atnb::bitwise_equal(one, atnb::matmul(a, b, false, 3)));
  CHECK(atnb::bitwise_equal(one, atnb::matmul(a, b, false, 8)));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    atnb::matmul(Matrix(2, 3), Matrix(4, 5));
    FAIL("expected ShapeError");
  } catch (const atnb::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("zero-size operands") {
  CHECK(atnb::matmul(Matrix(0, 4), Matrix(4, 3)).rows() == 0);
  const Matrix z = atnb::matmul(Matrix(2, 0), Matrix(0, 3));
  CHECK(z == Matrix(2, 3));
}

TEST_CASE("linear adds the bias to every row") {
  const atnb::Vector bias{10, 20};
  const Matrix y = atnb::linear(Matrix::from_rows({{1, 1}, {0, 2}}), Matrix::identity(2), bias);
  CHECK(y == Matrix::from_rows({{11, 21}, {10, 22}}));
}

TEST_CASE("softmax of [0, ln 2] is [1/3, 2/3]") {
  const Matrix s = atnb::softmax_rows(Matrix::from_rows({{0.0f, std::log(2.0f)}}));
  CHECK(s(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(s(0, 1) == doctest::Approx(2.0 / 3).epsilon(1e-6));
}

TEST_CASE("softmax is stable for large logits and handles -inf") {
  const float inf = std::numeric_limits<float>::infinity();
  const Matrix s = atnb::softmax_rows(Matrix::from_rows({{1000.0f, 1000.0f, -inf}}));
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));
  CHECK(s(0, 2) == 0.0f);
}

TEST_CASE("layer_norm of [1, 3] is [-1, 1]") {
  const atnb::Vector gain{1, 1}, bias{0, 0};
  const Matrix n = atnb::layer_norm(Matrix::from_rows({{1, 3}}), gain, bias);
  CHECK(n(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(n(0, 1) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm applies gain and offset") {
  const atnb::Vector gain{2, 3}, bias{1, -1};
  const Matrix n = atnb::layer_norm(Matrix::from_rows({{1, 3}}), gain, bias);
  CHECK(n(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(n(0, 1) == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("depthwise conv of [1,2,3] with ones(3) is [3,6,5]") {
  const Matrix y = atnb::depthwise_conv1d(Matrix::from_rows({{1}, {2}, {3}}), Matrix::from_rows({{1}, {1}, {1}}));
  CHECK(y == Matrix::from_rows({{3}, {6}, {5}}));
}

TEST_CASE("depthwise conv keeps channels separate and aligns the kernel centre") {
  // Kernel rows are taps -1, 0, +1.
  const Matrix x = Matrix::from_rows({{1, 10}, {2, 20}, {3, 30}});
  const Matrix k = Matrix::from_rows({{1, 0}, {0, 1}, {0, 0}});
  CHECK(atnb::depthwise_conv1d(x, k) == Matrix::from_rows({{0, 10}, {1, 20}, {2, 30}}));
}

TEST_CASE("depthwise conv rejects an even kernel") {
  CHECK_THROWS_AS(atnb::depthwise_conv1d(Matrix(4, 2), Matrix(2, 2)), atnb::ConfigError);
}

TEST_CASE("activations") {
  const Matrix x = Matrix::from_rows({{-1.0f, 0.0f, 2.0f}});
  CHECK(atnb::pointwise_nonlinear(x, atnb::Activation::relu) == Matrix::from_rows({{0, 0, 2}}));
  const Matrix s = atnb::pointwise_nonlinear(x, atnb::Activation::swish);
  CHECK(s(0, 0) == doctest::Approx(oracle::activate(-1.0, atnb::Activation::swish)));
  CHECK(s(0, 1) == 0.0f);
  const Matrix g = atnb::pointwise_nonlinear(x, atnb::Activation::gelu);
  CHECK(g(0, 2) == doctest::Approx(oracle::activate(2.0, atnb::Activation::gelu)));
  const Matrix glu = atnb::pointwise_nonlinear(Matrix::from_rows({{3.0f, 0.0f}}), atnb::Activation::glu);
  CHECK(glu == Matrix::from_rows({{1.5f}}));
  CHECK_THROWS_AS(atnb::pointwise_nonlinear(x, atnb::Activation::glu), atnb::ShapeError);
}

TEST_CASE("activation names") {
  for (auto a : {atnb::Activation::relu, atnb::Activation::swish, atnb::Activation::gelu, atnb::Activation::glu}) {
    CHECK(atnb::parse_activation(atnb::to_string(a)) == a);
  }
  CHECK_THROWS_AS(atnb::parse_activation("tanh"), atnb::ConfigError);
}

TEST_CASE("row and column blocks") {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(atnb::column_block(m, 1, 2) == Matrix::from_rows({{2, 3}, {5, 6}}));
  CHECK(atnb::row_block(m, 1, 1) == Matrix::from_rows({{4, 5, 6}}));
  Matrix dst(2, 3);
  atnb::set_column_block(dst, 2, Matrix::from_rows({{7}, {8}}));
  CHECK(dst == Matrix::from_rows({{0, 0, 7}, {0, 0, 8}}));
  CHECK(atnb::concat_rows(Matrix::from_rows({{1}}), Matrix::from_rows({{2}})) == Matrix::from_rows({{1}, {2}}));
  CHECK_THROWS_AS(atnb::column_block(m, 2, 2), atnb::ShapeError);
}

}  // TEST_SUITE
