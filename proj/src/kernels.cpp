#include "cdsgen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace cdsgen::kernels {
namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;
// Below this many multiply-adds a loop stays on the calling thread.
constexpr std::size_t kMinParallelWork = 1 << 15;

using Index = std::int64_t;
}  // namespace

void linear_forward(ConstMatView x, ConstMatView w, std::span<const double> bias, MatView out) {
  const Index n = static_cast<Index>(x.rows);
  const std::size_t k_dim = x.cols, m = w.cols;
#pragma omp parallel for schedule(static) if (x.rows * k_dim * m >= kMinParallelWork)
  for (Index i = 0; i < n; ++i) {
    double* o = out.row(static_cast<std::size_t>(i));
    const double* xi = x.row(static_cast<std::size_t>(i));
    if (bias.empty()) {
      std::fill(o, o + m, 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), o);
    }
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double xik = xi[k];
      const double* wk = w.row(k);
      for (std::size_t j = 0; j < m; ++j) o[j] += xik * wk[j];
    }
  }
}

void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx, MatView dw,
                     std::span<double> dbias, bool accumulate_dx) {
  const std::size_t n = x.rows, k_dim = x.cols, m = w.cols;
  const bool parallel = n * k_dim * m >= kMinParallelWork;
  if (dx.data) {
#pragma omp parallel for schedule(static) if (parallel)
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
      const double* gi = dout.row(static_cast<std::size_t>(i));
      double* dxi = dx.row(static_cast<std::size_t>(i));
      for (std::size_t k = 0; k < k_dim; ++k) {
        const double* wk = w.row(k);
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += gi[j] * wk[j];
        dxi[k] = accumulate_dx ? dxi[k] + acc : acc;
      }
    }
  }
#pragma omp parallel for schedule(static) if (parallel)
  for (Index k = 0; k < static_cast<Index>(k_dim); ++k) {
    double* dwk = dw.row(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
      const double xik = x(i, static_cast<std::size_t>(k));
      const double* gi = dout.row(i);
      for (std::size_t j = 0; j < m; ++j) dwk[j] += xik * gi[j];
    }
  }
  if (!dbias.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* gi = dout.row(i);
      for (std::size_t j = 0; j < m; ++j) dbias[j] += gi[j];
    }
  }
}

void layernorm_forward(ConstMatView x, std::span<const double> gamma, std::span<const double> beta,
                       MatView out, std::span<double> mean, std::span<double> rstd) {
  const std::size_t d = x.cols;
#pragma omp parallel for schedule(static) if (x.size() >= kMinParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(x.rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* xi = x.row(i);
    double m = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += xi[c];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t c = 0; c < d; ++c) v += (xi[c] - m) * (xi[c] - m);
    v /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(v + kLayerNormEps);
    double* o = out.row(i);
    for (std::size_t c = 0; c < d; ++c) o[c] = (xi[c] - m) * r * gamma[c] + beta[c];
    mean[i] = m;
    rstd[i] = r;
  }
}

void layernorm_backward(ConstMatView x, std::span<const double> gamma, std::span<const double> mean,
                        std::span<const double> rstd, ConstMatView dout, MatView dx,
                        std::span<double> dgamma, std::span<double> dbeta, bool accumulate_dx) {
  const std::size_t d = x.cols;
  const bool parallel = x.size() >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index ii = 0; ii < static_cast<Index>(x.rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* xi = x.row(i);
    const double* gi = dout.row(i);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (xi[c] - mean[i]) * rstd[i];
      const double dxhat = gi[c] * gamma[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    double* dxi = dx.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (xi[c] - mean[i]) * rstd[i];
      const double dxhat = gi[c] * gamma[c];
      const double g = rstd[i] * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
      dxi[c] = accumulate_dx ? dxi[c] + g : g;
    }
  }
  // Parameter gradients reduce over rows; rows are visited in order per column.
#pragma omp parallel for schedule(static) if (parallel)
  for (Index cc = 0; cc < static_cast<Index>(d); ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    double g_acc = dgamma[c], b_acc = dbeta[c];
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double xhat = (x(i, c) - mean[i]) * rstd[i];
      g_acc += dout(i, c) * xhat;
      b_acc += dout(i, c);
    }
    dgamma[c] = g_acc;
    dbeta[c] = b_acc;
  }
}

void gelu_forward(std::span<const double> x, std::span<double> out) {
#pragma omp parallel for schedule(static) if (x.size() >= kMinParallelWork)
  for (Index i = 0; i < static_cast<Index>(x.size()); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluScale * (v + kGeluCubic * v * v * v)));
  }
}

void gelu_backward(std::span<const double> x, std::span<const double> dout, std::span<double> dx) {
#pragma omp parallel for schedule(static) if (x.size() >= kMinParallelWork)
  for (Index i = 0; i < static_cast<Index>(x.size()); ++i) {
    const double v = x[i];
    const double t = std::tanh(kGeluScale * (v + kGeluCubic * v * v * v));
    const double dt = (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
    dx[i] = dout[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
  }
}

void attention_forward(ConstMatView qkv, AttentionShape shape, std::span<double> probs,
                       MatView out) {
  const std::size_t L = shape.length, H = shape.heads, d = shape.model_dim, hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index pairs = static_cast<Index>(shape.sequences * H);
#pragma omp parallel for schedule(static) if (shape.sequences * L * L * d >= kMinParallelWork)
  for (Index sh = 0; sh < pairs; ++sh) {
    const std::size_t s = static_cast<std::size_t>(sh) / H, h = static_cast<std::size_t>(sh) % H;
    double* p = probs.data() + static_cast<std::size_t>(sh) * L * L;
    for (std::size_t t = 0; t < L; ++t) {
      const double* q = qkv.row(s * L + t) + h * hd;
      double* pt = p + t * L;
      double mx = -INFINITY;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* k = qkv.row(s * L + u) + d + h * hd;
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[c] * k[c];
        pt[u] = dot * scale;
        mx = std::max(mx, pt[u]);
      }
      std::fill(pt + t + 1, pt + L, 0.0);
      double z = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        pt[u] = std::exp(pt[u] - mx);
        z += pt[u];
      }
      for (std::size_t u = 0; u <= t; ++u) pt[u] /= z;
      double* o = out.row(s * L + t) + h * hd;
      std::fill(o, o + hd, 0.0);
      for (std::size_t u = 0; u <= t; ++u) {
        const double* v = qkv.row(s * L + u) + 2 * d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) o[c] += pt[u] * v[c];
      }
    }
  }
}

void attention_backward(ConstMatView qkv, AttentionShape shape, std::span<const double> probs,
                        ConstMatView dout, MatView dqkv) {
  const std::size_t L = shape.length, H = shape.heads, d = shape.model_dim, hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index pairs = static_cast<Index>(shape.sequences * H);
#pragma omp parallel for schedule(static) if (shape.sequences * L * L * d >= kMinParallelWork)
  for (Index sh = 0; sh < pairs; ++sh) {
    const std::size_t s = static_cast<std::size_t>(sh) / H, h = static_cast<std::size_t>(sh) % H;
    const double* p = probs.data() + static_cast<std::size_t>(sh) * L * L;
    for (std::size_t t = 0; t < L; ++t) {
      double* r = dqkv.row(s * L + t);
      std::fill(r + h * hd, r + (h + 1) * hd, 0.0);
      std::fill(r + d + h * hd, r + d + (h + 1) * hd, 0.0);
      std::fill(r + 2 * d + h * hd, r + 2 * d + (h + 1) * hd, 0.0);
    }
    std::vector<double> dp(L);
    for (std::size_t t = 0; t < L; ++t) {
      const double* pt = p + t * L;
      const double* g = dout.row(s * L + t) + h * hd;
      double sum = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* v = qkv.row(s * L + u) + 2 * d + h * hd;
        double* dv = dqkv.row(s * L + u) + 2 * d + h * hd;
        double acc = 0.0;
        for (std::size_t c = 0; c < hd; ++c) {
          acc += g[c] * v[c];
          dv[c] += pt[u] * g[c];
        }
        dp[u] = acc;
        sum += pt[u] * acc;
      }
      const double* q = qkv.row(s * L + t) + h * hd;
      double* dq = dqkv.row(s * L + t) + h * hd;
      for (std::size_t u = 0; u <= t; ++u) {
        const double ds = pt[u] * (dp[u] - sum) * scale;
        const double* k = qkv.row(s * L + u) + d + h * hd;
        double* dk = dqkv.row(s * L + u) + d + h * hd;
        for (std::size_t c = 0; c < hd; ++c) {
          dq[c] += ds * k[c];
          dk[c] += ds * q[c];
        }
      }
    }
  }
}

void softmax_cross_entropy(ConstMatView logits, std::span<const int> targets, double scale,
                           std::span<double> row_loss, MatView dlogits) {
  const std::size_t m = logits.cols;
#pragma omp parallel for schedule(static) if (logits.size() >= kMinParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(logits.rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const int target = targets[i];
    const double* li = logits.row(i);
    if (target < 0) {
      row_loss[i] = 0.0;
      if (dlogits.data) std::fill(dlogits.row(i), dlogits.row(i) + m, 0.0);
      continue;
    }
    const double mx = *std::max_element(li, li + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(li[j] - mx);
    const double log_z = std::log(z) + mx;
    row_loss[i] = log_z - li[target];
    if (dlogits.data) {
      double* di = dlogits.row(i);
      for (std::size_t j = 0; j < m; ++j) di[j] = scale * std::exp(li[j] - log_z);
      di[target] -= scale;
    }
  }
}

}  // namespace cdsgen::kernels
