#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace atnb {

using Vector = std::vector<float>;

inline constexpr float kLayerNormEpsilon = 1e-5f;

// Dense row-major matrix of 32-bit reals. A matrix with zero rows stands for
// an absent parameter (a pruned head's block, an empty persistent memory).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Compares raw bit patterns, so +0/-0 and NaN payloads are distinguished.
bool bitwise_equal(const Matrix& a, const Matrix& b);
bool bitwise_equal(std::span<const float> a, std::span<const float> b);

// a·b, or a·bᵀ when transpose_b is set. Rows of the output are split across
// `workers` threads on fixed block boundaries, so the result does not depend
// on the worker count.
Matrix matmul(const Matrix& a, const Matrix& b, bool transpose_b = false, int workers = 1);

// x·w + bias (bias broadcast over rows; empty bias means none).
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias, int workers = 1);

Matrix softmax_rows(const Matrix& m);
void softmax_rows_inplace(Matrix& m);

Matrix layer_norm(const Matrix& m, std::span<const float> gain, std::span<const float> bias,
                  float epsilon = kLayerNormEpsilon);

// Same-padded depthwise convolution along rows. kernel is k×d with k odd.
Matrix depthwise_conv1d(const Matrix& m, const Matrix& kernel);

enum class Activation { relu, swish, gelu, glu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

// glu splits the columns in half and gates the first half by sigmoid of the
// second half, halving the width.
Matrix pointwise_nonlinear(const Matrix& m, Activation kind);

void add_row_bias(Matrix& m, std::span<const float> bias);
// a += scale·b
void add_scaled(Matrix& a, const Matrix& b, float scale = 1.0f);
void scale_inplace(Matrix& m, float factor);

Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count);
Matrix row_block(const Matrix& m, std::size_t begin, std::size_t count);
void set_column_block(Matrix& dst, std::size_t begin, const Matrix& src);
Matrix concat_rows(const Matrix& top, const Matrix& bottom);

float sigmoid(float x);

}  // namespace atnb
