#pragma once

// Dense kernels behind the transformer. Every kernel exists twice: the
// OpenMP version in cdsgen::kernels and a plain serial reference in
// cdsgen::kernels::ref with the same signature. Tests compare the two and the
// benchmark target times them. Each output element of the OpenMP kernels is
// produced by exactly one thread with a fixed summation order, so results do
// not depend on the thread count.
//
// All matrices are dense row-major.

#include <cstddef>
#include <span>

namespace cdsgen {

template <class T>
struct MatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) const { return data + r * cols; }
  std::size_t size() const { return rows * cols; }
  operator MatrixView<const T>() const { return {data, rows, cols}; }
};

using MatView = MatrixView<double>;
using ConstMatView = MatrixView<const double>;

struct AttentionShape {
  std::size_t sequences = 0;  // independent sequences stacked row-wise
  std::size_t length = 0;     // positions per sequence
  std::size_t heads = 0;
  std::size_t model_dim = 0;  // = heads * head_dim
};

namespace kernels {

// out = x * w + bias (bias may be empty). x: n×k, w: k×m, out: n×m.
void linear_forward(ConstMatView x, ConstMatView w, std::span<const double> bias, MatView out);
// dx (+)= dout * wᵀ; dw += xᵀ * dout; dbias += column sums of dout.
// dx may be a null view to skip it; accumulate selects += vs = for dx.
void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx, MatView dw,
                     std::span<double> dbias, bool accumulate_dx = false);

// Row-wise layer normalization with affine gamma/beta. mean and rstd (one per
// row) are saved for the backward pass.
void layernorm_forward(ConstMatView x, std::span<const double> gamma, std::span<const double> beta,
                       MatView out, std::span<double> mean, std::span<double> rstd);
// dx (+)= ...; dgamma, dbeta accumulate.
void layernorm_backward(ConstMatView x, std::span<const double> gamma, std::span<const double> mean,
                        std::span<const double> rstd, ConstMatView dout, MatView dx,
                        std::span<double> dgamma, std::span<double> dbeta, bool accumulate_dx);

// tanh-approximated GELU.
void gelu_forward(std::span<const double> x, std::span<double> out);
void gelu_backward(std::span<const double> x, std::span<const double> dout, std::span<double> dx);

// Causal multi-head self-attention on packed qkv (rows × 3d, q|k|v).
// probs holds sequences·heads·length·length attention weights.
void attention_forward(ConstMatView qkv, AttentionShape shape, std::span<double> probs,
                       MatView out);
void attention_backward(ConstMatView qkv, AttentionShape shape, std::span<const double> probs,
                        ConstMatView dout, MatView dqkv);

// Softmax cross-entropy per row. targets[r] < 0 marks an ignored row. Writes
// per-row losses (0 for ignored rows) and, when dlogits is non-null,
// scale * (softmax - onehot) for scored rows and zero otherwise.
void softmax_cross_entropy(ConstMatView logits, std::span<const int> targets, double scale,
                           std::span<double> row_loss, MatView dlogits);

namespace ref {
void linear_forward(ConstMatView x, ConstMatView w, std::span<const double> bias, MatView out);
void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx, MatView dw,
                     std::span<double> dbias, bool accumulate_dx = false);
void layernorm_forward(ConstMatView x, std::span<const double> gamma, std::span<const double> beta,
                       MatView out, std::span<double> mean, std::span<double> rstd);
void layernorm_backward(ConstMatView x, std::span<const double> gamma, std::span<const double> mean,
                        std::span<const double> rstd, ConstMatView dout, MatView dx,
                        std::span<double> dgamma, std::span<double> dbeta, bool accumulate_dx);
void gelu_forward(std::span<const double> x, std::span<double> out);
void gelu_backward(std::span<const double> x, std::span<const double> dout, std::span<double> dx);
void attention_forward(ConstMatView qkv, AttentionShape shape, std::span<double> probs,
                       MatView out);
void attention_backward(ConstMatView qkv, AttentionShape shape, std::span<const double> probs,
                        ConstMatView dout, MatView dqkv);
void softmax_cross_entropy(ConstMatView logits, std::span<const int> targets, double scale,
                           std::span<double> row_loss, MatView dlogits);
}  // namespace ref

}  // namespace kernels
}  // namespace cdsgen
