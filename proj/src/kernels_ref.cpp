// Serial reference kernels: direct transcriptions of the math, no blocking.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cdsgen/kernels.hpp"

namespace cdsgen::kernels::ref {
namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

void linear_forward(ConstMatView x, ConstMatView w, std::span<const double> bias, MatView out) {
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = bias.empty() ? 0.0 : bias[j];
      for (std::size_t k = 0; k < x.cols; ++k) acc += x(i, k) * w(k, j);
      out(i, j) = acc;
    }
  }
}

void linear_backward(ConstMatView x, ConstMatView w, ConstMatView dout, MatView dx, MatView dw,
                     std::span<double> dbias, bool accumulate_dx) {
  if (dx.data) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t k = 0; k < x.cols; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) acc += dout(i, j) * w(k, j);
        dx(i, k) = accumulate_dx ? dx(i, k) + acc : acc;
      }
    }
  }
  for (std::size_t k = 0; k < x.cols; ++k) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = dw(k, j);
      for (std::size_t i = 0; i < x.rows; ++i) acc += x(i, k) * dout(i, j);
      dw(k, j) = acc;
    }
  }
  if (!dbias.empty()) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      for (std::size_t i = 0; i < x.rows; ++i) dbias[j] += dout(i, j);
    }
  }
}

void layernorm_forward(ConstMatView x, std::span<const double> gamma, std::span<const double> beta,
                       MatView out, std::span<double> mean, std::span<double> rstd) {
  const std::size_t d = x.cols;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += x(i, c);
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t c = 0; c < d; ++c) v += (x(i, c) - m) * (x(i, c) - m);
    v /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(v + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) out(i, c) = (x(i, c) - m) * r * gamma[c] + beta[c];
    mean[i] = m;
    rstd[i] = r;
  }
}

void layernorm_backward(ConstMatView x, std::span<const double> gamma, std::span<const double> mean,
                        std::span<const double> rstd, ConstMatView dout, MatView dx,
                        std::span<double> dgamma, std::span<double> dbeta, bool accumulate_dx) {
  const std::size_t d = x.cols;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (x(i, c) - mean[i]) * rstd[i];
      const double dxhat = dout(i, c) * gamma[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dgamma[c] += dout(i, c) * xhat;
      dbeta[c] += dout(i, c);
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (x(i, c) - mean[i]) * rstd[i];
      const double dxhat = dout(i, c) * gamma[c];
      const double g = rstd[i] * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
      dx(i, c) = accumulate_dx ? dx(i, c) + g : g;
    }
  }
}

void gelu_forward(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluScale * (v + kGeluCubic * v * v * v)));
  }
}

void gelu_backward(std::span<const double> x, std::span<const double> dout, std::span<double> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
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
  for (std::size_t s = 0; s < shape.sequences; ++s) {
    for (std::size_t h = 0; h < H; ++h) {
      double* p = probs.data() + (s * H + h) * L * L;
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t rt = s * L + t;
        double mx = -INFINITY;
        for (std::size_t u = 0; u < L; ++u) {
          if (u > t) {
            p[t * L + u] = 0.0;
            continue;
          }
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += qkv(rt, h * hd + c) * qkv(s * L + u, d + h * hd + c);
          p[t * L + u] = dot * scale;
          mx = std::max(mx, p[t * L + u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          p[t * L + u] = std::exp(p[t * L + u] - mx);
          z += p[t * L + u];
        }
        for (std::size_t u = 0; u <= t; ++u) p[t * L + u] /= z;
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) acc += p[t * L + u] * qkv(s * L + u, 2 * d + h * hd + c);
          out(rt, h * hd + c) = acc;
        }
      }
    }
  }
}

void attention_backward(ConstMatView qkv, AttentionShape shape, std::span<const double> probs,
                        ConstMatView dout, MatView dqkv) {
  const std::size_t L = shape.length, H = shape.heads, d = shape.model_dim, hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t i = 0; i < dqkv.size(); ++i) dqkv.data[i] = 0.0;
  for (std::size_t s = 0; s < shape.sequences; ++s) {
    for (std::size_t h = 0; h < H; ++h) {
      const double* p = probs.data() + (s * H + h) * L * L;
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t rt = s * L + t;
        std::vector<double> dp(t + 1);
        double sum = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          const std::size_t ru = s * L + u;
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) acc += dout(rt, h * hd + c) * qkv(ru, 2 * d + h * hd + c);
          dp[u] = acc;
          sum += p[t * L + u] * acc;
          for (std::size_t c = 0; c < hd; ++c) dqkv(ru, 2 * d + h * hd + c) += p[t * L + u] * dout(rt, h * hd + c);
        }
        for (std::size_t u = 0; u <= t; ++u) {
          const std::size_t ru = s * L + u;
          const double ds = p[t * L + u] * (dp[u] - sum) * scale;
          for (std::size_t c = 0; c < hd; ++c) {
            dqkv(rt, h * hd + c) += ds * qkv(ru, d + h * hd + c);
            dqkv(ru, d + h * hd + c) += ds * qkv(rt, h * hd + c);
          }
        }
      }
    }
  }
}

void softmax_cross_entropy(ConstMatView logits, std::span<const int> targets, double scale,
                           std::span<double> row_loss, MatView dlogits) {
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int target = targets[i];
    if (target < 0) {
      row_loss[i] = 0.0;
      if (dlogits.data) {
        for (std::size_t j = 0; j < logits.cols; ++j) dlogits(i, j) = 0.0;
      }
      continue;
    }
    double mx = -INFINITY;
    for (std::size_t j = 0; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
    const double log_z = std::log(z) + mx;
    row_loss[i] = log_z - logits(i, static_cast<std::size_t>(target));
    if (dlogits.data) {
      for (std::size_t j = 0; j < logits.cols; ++j) {
        const double p = std::exp(logits(i, j) - log_z);
        dlogits(i, j) = scale * (p - (static_cast<int>(j) == target ? 1.0 : 0.0));
      }
    }
  }
}

}  // namespace cdsgen::kernels::ref
