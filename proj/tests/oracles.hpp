#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths being checked.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cdsgen/model.hpp"

namespace oracle {

// Plain WordPiece trainer: recount every pair from scratch after each merge.
inline std::vector<std::string> wordpiece_vocab(const std::map<std::string, int>& word_counts,
                                                std::size_t target_size) {
  std::vector<std::pair<std::vector<std::string>, int>> words;
  std::set<std::string> alphabet;
  for (const auto& [w, c] : word_counts) {
    std::vector<std::string> pieces;
    for (std::size_t i = 0; i < w.size(); ++i) {
      pieces.push_back(i == 0 ? std::string(1, w[i]) : "##" + std::string(1, w[i]));
      alphabet.insert(pieces.back());
    }
    words.emplace_back(pieces, c);
  }
  std::vector<std::string> vocab = {"[UNK]", "."};
  for (const auto& a : alphabet) vocab.push_back(a);
  while (vocab.size() < target_size) {
    std::map<std::string, double> piece_count;
    std::map<std::pair<std::string, std::string>, double> pair_count;
    for (const auto& [pieces, c] : words) {
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        piece_count[pieces[i]] += c;
        if (i + 1 < pieces.size()) pair_count[{pieces[i], pieces[i + 1]}] += c;
      }
    }
    if (pair_count.empty()) break;
    // std::map iterates in (left, right) lexicographic order, so the first
    // maximum found is the tie winner.
    std::pair<std::string, std::string> best;
    double best_score = -1.0;
    for (const auto& [pair, c] : pair_count) {
      const double score = c / (piece_count[pair.first] * piece_count[pair.second]);
      if (score > best_score) best_score = score, best = pair;
    }
    const std::string merged = best.first + best.second.substr(2);
    if (std::find(vocab.begin(), vocab.end(), merged) == vocab.end()) vocab.push_back(merged);
    for (auto& [pieces, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i + 1 < pieces.size() && pieces[i] == best.first && pieces[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(pieces[i]);
        }
      }
      pieces = next;
    }
  }
  return vocab;
}

// O(n·m) contiguous-subsequence scan over every utterance.
inline bool naive_contains(const std::vector<std::vector<int>>& corpus,
                           const std::vector<int>& query) {
  if (query.empty()) return true;
  for (const auto& u : corpus) {
    if (u.size() < query.size()) continue;
    for (std::size_t s = 0; s + query.size() <= u.size(); ++s) {
      if (std::equal(query.begin(), query.end(), u.begin() + static_cast<std::ptrdiff_t>(s))) {
        return true;
      }
    }
  }
  return false;
}

inline std::size_t naive_count(const std::vector<std::vector<int>>& corpus,
                               const std::vector<int>& query) {
  std::size_t n = 0;
  for (const auto& u : corpus) {
    for (std::size_t s = 0; s + query.size() <= u.size(); ++s) {
      if (std::equal(query.begin(), query.end(), u.begin() + static_cast<std::ptrdiff_t>(s))) ++n;
    }
  }
  return n;
}

// Scalar transformer forward in eval mode, written from the architecture
// description with no shared kernels.
inline std::vector<std::vector<double>> transformer_logits(const cdsgen::Parameters& p,
                                                           double age,
                                                           const std::vector<int>& tokens) {
  const auto& c = p.config();
  const auto& L = p.layout();
  const std::size_t d = c.d_model, S = tokens.size() + 1, H = c.n_heads, hd = d / H;
  auto at = [&](std::size_t tensor, std::size_t r, std::size_t col) {
    const auto& t = L.tensors[tensor];
    return p.values()[t.offset + r * t.cols + col];
  };
  using Mat = std::vector<std::vector<double>>;
  auto layer_norm = [&](const Mat& x, std::size_t g, std::size_t b) {
    Mat y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double m = 0, v = 0;
      for (double e : x[i]) m += e;
      m /= d;
      for (double e : x[i]) v += (e - m) * (e - m);
      v /= d;
      for (std::size_t k = 0; k < d; ++k) {
        y[i][k] = (x[i][k] - m) / std::sqrt(v + 1e-5) * at(g, 0, k) + at(b, 0, k);
      }
    }
    return y;
  };
  auto affine = [&](const Mat& x, std::size_t w, std::size_t b) {
    const auto& t = L.tensors[w];
    Mat y(x.size(), std::vector<double>(t.cols));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < t.cols; ++j) {
        double s = at(b, 0, j);
        for (std::size_t k = 0; k < t.rows; ++k) s += x[i][k] * at(w, k, j);
        y[i][j] = s;
      }
    }
    return y;
  };

  Mat x(S, std::vector<double>(d));
  for (std::size_t k = 0; k < d; ++k) {
    x[0][k] = std::max(0.0, at(L.age_w, 0, k) * (age / c.age_scale) + at(L.age_b, 0, k));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      x[i + 1][k] = at(L.token_embedding, tokens[i], k) + at(L.position_embedding, i, k);
    }
  }
  for (const auto& b : L.blocks) {
    Mat qkv = affine(layer_norm(x, b.ln1_gamma, b.ln1_beta), b.qkv_w, b.qkv_b);
    Mat att(S, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < S; ++t) {
        std::vector<double> score(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double s = 0;
          for (std::size_t k = 0; k < hd; ++k) s += qkv[t][h * hd + k] * qkv[u][d + h * hd + k];
          score[u] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, score[u]);
        }
        double z = 0;
        for (auto& s : score) z += (s = std::exp(s - mx));
        for (std::size_t u = 0; u <= t; ++u) {
          for (std::size_t k = 0; k < hd; ++k) {
            att[t][h * hd + k] += score[u] / z * qkv[u][2 * d + h * hd + k];
          }
        }
      }
    }
    Mat proj = affine(att, b.proj_w, b.proj_b);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t k = 0; k < d; ++k) x[i][k] += proj[i][k];
    Mat hidden = affine(layer_norm(x, b.ln2_gamma, b.ln2_beta), b.fc_w, b.fc_b);
    for (auto& row : hidden) {
      for (auto& v : row) {
        v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      }
    }
    Mat mlp = affine(hidden, b.out_w, b.out_b);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t k = 0; k < d; ++k) x[i][k] += mlp[i][k];
  }
  return affine(layer_norm(x, L.final_ln_gamma, L.final_ln_beta), L.head_w, L.head_b);
}

// Mean cross-entropy of rows against targets via explicit softmax and log.
inline double cross_entropy(const std::vector<std::vector<double>>& logits,
                            const std::vector<int>& targets) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    double z = 0.0;
    for (double v : logits[r]) z += std::exp(v);
    total += -std::log(std::exp(logits[r][targets[r]]) / z);
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace oracle
