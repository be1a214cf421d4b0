#include "atnb/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>
#include <thread>

#include "atnb/error.hpp"

namespace atnb {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << "[" << rows_ << "x" << cols_ << "]";
  return os.str();
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && bitwise_equal(a.data(), b.data());
}

namespace {

constexpr std::size_t kPanelWidth = 32;  // columns of B per packed panel
constexpr std::size_t kRowBlock = 6;     // rows of A per micro-kernel call
constexpr std::size_t kRowChunk = 16 * kRowBlock;

// B (k×n, row stride ldb) packed into ceil(n/32) panels of k×32, zero padded.
std::vector<float> pack_panels(const float* b, std::size_t k, std::size_t n, std::size_t ldb) {
  const std::size_t panels = (n + kPanelWidth - 1) / kPanelWidth;
  std::vector<float> packed(panels * k * kPanelWidth, 0.0f);
  for (std::size_t p = 0; p < panels; ++p) {
    const std::size_t j0 = p * kPanelWidth;
    const std::size_t width = std::min(kPanelWidth, n - j0);
    float* dst = packed.data() + p * k * kPanelWidth;
    for (std::size_t kk = 0; kk < k; ++kk) {
      std::memcpy(dst + kk * kPanelWidth, b + kk * ldb + j0, width * sizeof(float));
    }
  }
  return packed;
}

template <std::size_t Rows>
void micro_kernel(const float* a, std::size_t lda, const float* panel, std::size_t k, float* c,
                  std::size_t ldc, std::size_t width) {
  float acc[Rows][kPanelWidth] = {};
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* bk = panel + kk * kPanelWidth;
    for (std::size_t r = 0; r < Rows; ++r) {
      const float av = a[r * lda + kk];
      for (std::size_t j = 0; j < kPanelWidth; ++j) acc[r][j] += av * bk[j];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    std::memcpy(c + r * ldc, acc[r], width * sizeof(float));
  }
}

void gemm_rows(const float* a, std::size_t lda, const std::vector<float>& packed, std::size_t k,
               std::size_t n, float* c, std::size_t ldc, std::size_t row_begin,
               std::size_t row_end) {
  const std::size_t panels = (n + kPanelWidth - 1) / kPanelWidth;
  for (std::size_t chunk = row_begin; chunk < row_end; chunk += kRowChunk) {
    const std::size_t chunk_end = std::min(row_end, chunk + kRowChunk);
    for (std::size_t p = 0; p < panels; ++p) {
      const std::size_t j0 = p * kPanelWidth;
      const std::size_t width = std::min(kPanelWidth, n - j0);
      const float* panel = packed.data() + p * k * kPanelWidth;
      std::size_t i = chunk;
      for (; i + kRowBlock <= chunk_end; i += kRowBlock) {
        micro_kernel<kRowBlock>(a + i * lda, lda, panel, k, c + i * ldc + j0, ldc, width);
      }
      for (; i < chunk_end; ++i) {
        micro_kernel<1>(a + i * lda, lda, panel, k, c + i * ldc + j0, ldc, width);
      }
    }
  }
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b, bool transpose_b, int workers) {
  const std::size_t inner = transpose_b ? b.cols() : b.rows();
  if (a.cols() != inner) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string() +
                     (transpose_b ? "^T" : ""));
  }
  const std::size_t m = a.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  Matrix out(m, n);
  if (m == 0 || n == 0) return out;
  if (inner == 0) return out;

  std::vector<float> packed;
  if (transpose_b) {
    const Matrix bt = transpose(b);
    packed = pack_panels(bt.data().data(), inner, n, n);
  } else {
    packed = pack_panels(b.data().data(), inner, n, n);
  }

  const float* ap = a.data().data();
  float* cp = out.data().data();
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const std::size_t threads =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, blocks);
  if (threads == 1) {
    gemm_rows(ap, inner, packed, inner, n, cp, n, 0, m);
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t per = (blocks + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(m, t * per * kRowBlock);
    const std::size_t end = std::min(m, (t + 1) * per * kRowBlock);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] { gemm_rows(ap, inner, packed, inner, n, cp, n, begin, end); });
  }
  for (auto& th : pool) th.join();
  return out;
}

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias, int workers) {
  Matrix out = matmul(x, w, false, workers);
  if (!bias.empty()) add_row_bias(out, bias);
  return out;
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const float peak = *std::max_element(row.begin(), row.end());
    float total = 0.0f;
    for (float& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    const float inv = 1.0f / total;
    for (float& v : row) v *= inv;
  }
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  softmax_rows_inplace(out);
  return out;
}

Matrix layer_norm(const Matrix& m, std::span<const float> gain, std::span<const float> bias,
                  float epsilon) {
  if (gain.size() != m.cols() || bias.size() != m.cols()) {
    throw ShapeError("layer_norm: gain/bias length " + std::to_string(gain.size()) + "/" +
                     std::to_string(bias.size()) + " does not match " + m.shape_string());
  }
  Matrix out(m.rows(), m.cols());
  const float width = static_cast<float>(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto dst = out.row(r);
    float mean = 0.0f;
    for (float v : in) mean += v;
    mean /= width;
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= width;
    const float inv = 1.0f / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < in.size(); ++c) dst[c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

Matrix depthwise_conv1d(const Matrix& m, const Matrix& kernel) {
  if (kernel.rows() % 2 == 0) {
    throw ConfigError("depthwise_conv1d: kernel size " + std::to_string(kernel.rows()) +
                      " must be odd");
  }
  if (kernel.cols() != m.cols()) {
    throw ShapeError("depthwise_conv1d: kernel " + kernel.shape_string() +
                     " does not match input " + m.shape_string());
  }
  const auto length = static_cast<std::ptrdiff_t>(m.rows());
  const auto taps = static_cast<std::ptrdiff_t>(kernel.rows());
  const std::ptrdiff_t half = (taps - 1) / 2;
  const std::size_t width = m.cols();
  Matrix out(m.rows(), width);
  for (std::ptrdiff_t t = 0; t < length; ++t) {
    float* dst = out.row(static_cast<std::size_t>(t)).data();
    const std::ptrdiff_t j_begin = std::max<std::ptrdiff_t>(0, half - t);
    const std::ptrdiff_t j_end = std::min(taps, length - t + half);
    for (std::ptrdiff_t j = j_begin; j < j_end; ++j) {
      const float* src = m.row(static_cast<std::size_t>(t + j - half)).data();
      const float* w = kernel.row(static_cast<std::size_t>(j)).data();
      for (std::size_t c = 0; c < width; ++c) dst[c] += w[c] * src[c];
    }
  }
  return out;
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "swish") return Activation::swish;
  if (name == "gelu") return Activation::gelu;
  if (name == "glu") return Activation::glu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
    case Activation::gelu: return "gelu";
    case Activation::glu: return "glu";
  }
  return "?";
}

Matrix pointwise_nonlinear(const Matrix& m, Activation kind) {
  if (kind == Activation::glu) {
    if (m.cols() % 2 != 0) {
      throw ShapeError("glu needs an even column count, got " + m.shape_string());
    }
    const std::size_t half = m.cols() / 2;
    Matrix out(m.rows(), half);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto in = m.row(r);
      auto dst = out.row(r);
      for (std::size_t c = 0; c < half; ++c) dst[c] = in[c] * sigmoid(in[half + c]);
    }
    return out;
  }
  Matrix out = m;
  auto data = out.data();
  switch (kind) {
    case Activation::relu:
      for (float& v : data) v = std::max(v, 0.0f);
      break;
    case Activation::swish:
      for (float& v : data) v = v * sigmoid(v);
      break;
    case Activation::gelu:
      for (float& v : data) v = 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f));
      break;
    case Activation::glu:
      break;
  }
  return out;
}

void add_row_bias(Matrix& m, std::span<const float> bias) {
  if (bias.size() != m.cols()) {
    throw ShapeError("bias length " + std::to_string(bias.size()) + " does not match " +
                     m.shape_string());
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

void add_scaled(Matrix& a, const Matrix& b, float scale) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: " + a.shape_string() + " vs " + b.shape_string());
  }
  auto dst = a.data();
  const auto src = b.data();
  if (scale == 1.0f) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
}

void scale_inplace(Matrix& m, float factor) {
  for (float& v : m.data()) v *= factor;
}

Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) {
    throw ShapeError("column block [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + m.shape_string());
  }
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::memcpy(out.row(r).data(), m.row(r).data() + begin, count * sizeof(float));
  }
  return out;
}

Matrix row_block(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.rows()) {
    throw ShapeError("row block [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + m.shape_string());
  }
  const auto first = m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols());
  return Matrix(count, m.cols(),
                std::vector<float>(first, first + static_cast<std::ptrdiff_t>(count * m.cols())));
}

void set_column_block(Matrix& dst, std::size_t begin, const Matrix& src) {
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols()) {
    throw ShapeError("cannot place " + src.shape_string() + " at column " + std::to_string(begin) +
                     " of " + dst.shape_string());
  }
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::memcpy(dst.row(r).data() + begin, src.row(r).data(), src.cols() * sizeof(float));
  }
}

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols() != bottom.cols()) {
    throw ShapeError("concat_rows: " + top.shape_string() + " vs " + bottom.shape_string());
  }
  std::vector<float> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

}  // namespace atnb
