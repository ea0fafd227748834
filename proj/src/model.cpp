#include "cdsgen/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"

namespace cdsgen {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (n_blocks == 0) throw ConfigError("n_blocks must be positive");
  if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0 || micro_batch == 0) throw ConfigError("batch sizes must be positive");
  if (!(age_scale > 0.0)) throw ConfigError("age_scale must be positive");
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  return d_model == o.d_model && n_blocks == o.n_blocks && n_heads == o.n_heads &&
         seq_len == o.seq_len && vocab_size == o.vocab_size && ffn_dim == o.ffn_dim &&
         age_scale == o.age_scale;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_blocks", c.n_blocks},
                     {"n_heads", c.n_heads},
                     {"dropout", c.dropout},
                     {"seq_len", c.seq_len},
                     {"vocab_size", c.vocab_size},
                     {"ffn_dim", c.ffn_dim},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"patience", c.patience},
                     {"age_scale", c.age_scale},
                     {"score_age_position", c.score_age_position},
                     {"max_epochs", c.max_epochs},
                     {"micro_batch", c.micro_batch},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.dropout = j.value("dropout", d.dropout);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.patience = j.value("patience", d.patience);
  c.age_scale = j.value("age_scale", d.age_scale);
  c.score_age_position = j.value("score_age_position", d.score_age_position);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.micro_batch = j.value("micro_batch", d.micro_batch);
  c.init_std = j.value("init_std", d.init_std);
}

ParameterLayout ParameterLayout::build(const ModelConfig& c) {
  ParameterLayout l;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    l.tensors.push_back({std::move(name), l.total, rows, cols});
    l.total += rows * cols;
    return l.tensors.size() - 1;
  };
  const std::size_t d = c.d_model;
  l.token_embedding = add("token_embedding", c.vocab_size, d);
  l.position_embedding = add("position_embedding", c.seq_len, d);
  l.age_w = add("age.w", 1, d);
  l.age_b = add("age.b", 1, d);
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockTensors t{};
    t.ln1_gamma = add(p + "ln1.gamma", 1, d);
    t.ln1_beta = add(p + "ln1.beta", 1, d);
    t.qkv_w = add(p + "attn.qkv.w", d, 3 * d);
    t.qkv_b = add(p + "attn.qkv.b", 1, 3 * d);
    t.proj_w = add(p + "attn.proj.w", d, d);
    t.proj_b = add(p + "attn.proj.b", 1, d);
    t.ln2_gamma = add(p + "ln2.gamma", 1, d);
    t.ln2_beta = add(p + "ln2.beta", 1, d);
    t.fc_w = add(p + "ffn.fc.w", d, c.ffn_dim);
    t.fc_b = add(p + "ffn.fc.b", 1, c.ffn_dim);
    t.out_w = add(p + "ffn.out.w", c.ffn_dim, d);
    t.out_b = add(p + "ffn.out.b", 1, d);
    l.blocks.push_back(t);
  }
  l.final_ln_gamma = add("final_ln.gamma", 1, d);
  l.final_ln_beta = add("final_ln.beta", 1, d);
  l.head_w = add("head.w", d, c.vocab_size);
  l.head_b = add("head.b", 1, c.vocab_size);
  return l;
}

std::optional<std::size_t> ParameterLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return i;
  }
  return std::nullopt;
}

Parameters::Parameters(ModelConfig config)
    : config_(std::move(config)), layout_(ParameterLayout::build(config_)),
      values_(layout_.total, 0.0) {
  config_.validate();
}

Parameters Parameters::initialize(const ModelConfig& config, Rng& rng) {
  Parameters p(config);
  for (const auto& t : p.layout_.tensors) {
    double* data = p.values_.data() + t.offset;
    const bool is_gain = t.name.ends_with(".gamma");
    const bool is_bias = t.name.ends_with(".b") || t.name.ends_with(".beta");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (is_gain) data[i] = 1.0;
      else if (is_bias) data[i] = 0.0;
      else data[i] = config.init_std * rng.normal();
    }
  }
  // The age conditioner maps a scalar in [0, 1]; a unit-scale weight keeps
  // the ReLU output non-degenerate at initialization.
  for (std::size_t i = 0; i < config.d_model; ++i) {
    p.values_[p.layout_.tensors[p.layout_.age_w].offset + i] = rng.normal();
  }
  return p;
}

bool Parameters::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

struct BlockCache {
  Matrix x_in, ln1, qkv, att, proj, x_mid, ln2, fc, act, mlp;
  std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd, probs, mask1, mask2;
};

void fill_mask(std::vector<double>& mask, std::size_t n, double p, Mode mode, Rng* rng) {
  mask.assign(n, 1.0);
  if (mode != Mode::Train || p <= 0.0) return;
  if (!rng) throw ConfigError("train mode with dropout requires an rng");
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng->uniform() < p ? 0.0 : keep;
}

void apply_mask(Matrix& m, const std::vector<double>& mask) {
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] *= mask[i];
}

// Forward/backward over N stacked sequences of equal length.
class Engine {
 public:
  explicit Engine(const Parameters& p) : p_(p), c_(p.config()), l_(p.layout()) {}

  void forward(std::span<const double> ages, std::span<const TokenId> tokens, std::size_t n,
               std::size_t t, Mode mode, Rng* rng) {
    if (t == 0 || t > c_.seq_len) {
      throw LengthError("sequence of " + std::to_string(t) + " tokens; allowed 1.." +
                        std::to_string(c_.seq_len));
    }
    for (TokenId id : tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= c_.vocab_size) {
        throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
      }
    }
    n_ = n, t_ = t, s_ = t + 1, r_ = n * s_;
    const std::size_t d = c_.d_model;
    mode_ = mode;
    ages_.assign(ages.begin(), ages.end());
    tokens_.assign(tokens.begin(), tokens.end());

    age_pre_ = Matrix(n, d);
    Matrix x(r_, d);
    auto tok = p_.mat(l_.token_embedding);
    auto pos = p_.mat(l_.position_embedding);
    auto aw = p_.vec(l_.age_w);
    auto ab = p_.vec(l_.age_b);
    for (std::size_t s = 0; s < n; ++s) {
      if (!(ages[s] >= 0.0) || !std::isfinite(ages[s])) throw InputError("age must be finite and >= 0");
      const double a = ages[s] / c_.age_scale;
      for (std::size_t c = 0; c < d; ++c) {
        age_pre_(s, c) = aw[c] * a + ab[c];
        x(s * s_, c) = std::max(0.0, age_pre_(s, c));
      }
      for (std::size_t i = 0; i < t; ++i) {
        const double* te = tok.row(static_cast<std::size_t>(tokens[s * t + i]));
        const double* pe = pos.row(i);
        for (std::size_t c = 0; c < d; ++c) x(s * s_ + i + 1, c) = te[c] + pe[c];
      }
    }
    fill_mask(emb_mask_, x.data.size(), c_.dropout, mode, rng);
    apply_mask(x, emb_mask_);

    blocks_.resize(c_.n_blocks);
    const AttentionShape shape{n, s_, c_.n_heads, d};
    for (std::size_t b = 0; b < c_.n_blocks; ++b) {
      const auto& bt = l_.blocks[b];
      auto& bc = blocks_[b];
      bc.x_in = std::move(x);
      bc.ln1 = Matrix(r_, d);
      bc.ln1_mean.resize(r_);
      bc.ln1_rstd.resize(r_);
      kernels::layernorm_forward(bc.x_in.view(), p_.vec(bt.ln1_gamma), p_.vec(bt.ln1_beta),
                                 bc.ln1.view(), bc.ln1_mean, bc.ln1_rstd);
      bc.qkv = Matrix(r_, 3 * d);
      kernels::linear_forward(bc.ln1.view(), p_.mat(bt.qkv_w), p_.vec(bt.qkv_b), bc.qkv.view());
      bc.probs.resize(n * c_.n_heads * s_ * s_);
      bc.att = Matrix(r_, d);
      kernels::attention_forward(bc.qkv.view(), shape, bc.probs, bc.att.view());
      bc.proj = Matrix(r_, d);
      kernels::linear_forward(bc.att.view(), p_.mat(bt.proj_w), p_.vec(bt.proj_b), bc.proj.view());
      fill_mask(bc.mask1, bc.proj.data.size(), c_.dropout, mode, rng);
      bc.x_mid = bc.x_in;
      for (std::size_t i = 0; i < bc.x_mid.data.size(); ++i) {
        bc.x_mid.data[i] += bc.proj.data[i] * bc.mask1[i];
      }
      bc.ln2 = Matrix(r_, d);
      bc.ln2_mean.resize(r_);
      bc.ln2_rstd.resize(r_);
      kernels::layernorm_forward(bc.x_mid.view(), p_.vec(bt.ln2_gamma), p_.vec(bt.ln2_beta),
                                 bc.ln2.view(), bc.ln2_mean, bc.ln2_rstd);
      bc.fc = Matrix(r_, c_.ffn_dim);
      kernels::linear_forward(bc.ln2.view(), p_.mat(bt.fc_w), p_.vec(bt.fc_b), bc.fc.view());
      bc.act = Matrix(r_, c_.ffn_dim);
      kernels::gelu_forward(bc.fc.data, bc.act.data);
      bc.mlp = Matrix(r_, d);
      kernels::linear_forward(bc.act.view(), p_.mat(bt.out_w), p_.vec(bt.out_b), bc.mlp.view());
      fill_mask(bc.mask2, bc.mlp.data.size(), c_.dropout, mode, rng);
      x = bc.x_mid;
      for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += bc.mlp.data[i] * bc.mask2[i];
    }
    x_final_ = std::move(x);
    lnf_ = Matrix(r_, d);
    lnf_mean_.resize(r_);
    lnf_rstd_.resize(r_);
    kernels::layernorm_forward(x_final_.view(), p_.vec(l_.final_ln_gamma),
                               p_.vec(l_.final_ln_beta), lnf_.view(), lnf_mean_, lnf_rstd_);
    logits_ = Matrix(r_, c_.vocab_size);
    kernels::linear_forward(lnf_.view(), p_.mat(l_.head_w), p_.vec(l_.head_b), logits_.view());
  }

  Matrix& logits() { return logits_; }
  std::size_t rows() const { return r_; }

  // grad accumulates d(loss)/d(params) given d(loss)/d(logits).
  void backward(const Matrix& dlogits, std::vector<double>& grad) {
    const std::size_t d = c_.d_model;
    auto gview = [&](std::size_t tensor) { return p_.view(grad, tensor); };
    auto gvec = [&](std::size_t tensor) {
      const auto& t = l_.tensors[tensor];
      return std::span<double>(grad.data() + t.offset, t.size());
    };

    Matrix dlnf(r_, d);
    kernels::linear_backward(lnf_.view(), p_.mat(l_.head_w), dlogits.view(), dlnf.view(),
                             gview(l_.head_w), gvec(l_.head_b));
    Matrix dx(r_, d);
    kernels::layernorm_backward(x_final_.view(), p_.vec(l_.final_ln_gamma), lnf_mean_, lnf_rstd_,
                                dlnf.view(), dx.view(), gvec(l_.final_ln_gamma),
                                gvec(l_.final_ln_beta), false);

    const AttentionShape shape{n_, s_, c_.n_heads, d};
    Matrix dbranch(r_, d), dact(r_, c_.ffn_dim), dfc(r_, c_.ffn_dim), dln(r_, d), datt(r_, d),
        dqkv(r_, 3 * d);
    for (std::size_t bi = c_.n_blocks; bi-- > 0;) {
      const auto& bt = l_.blocks[bi];
      const auto& bc = blocks_[bi];
      // x_out = x_mid + mask2 * mlp
      for (std::size_t i = 0; i < dx.data.size(); ++i) dbranch.data[i] = dx.data[i] * bc.mask2[i];
      kernels::linear_backward(bc.act.view(), p_.mat(bt.out_w), dbranch.view(), dact.view(),
                               gview(bt.out_w), gvec(bt.out_b));
      kernels::gelu_backward(bc.fc.data, dact.data, dfc.data);
      kernels::linear_backward(bc.ln2.view(), p_.mat(bt.fc_w), dfc.view(), dln.view(),
                               gview(bt.fc_w), gvec(bt.fc_b));
      kernels::layernorm_backward(bc.x_mid.view(), p_.vec(bt.ln2_gamma), bc.ln2_mean, bc.ln2_rstd,
                                  dln.view(), dx.view(), gvec(bt.ln2_gamma), gvec(bt.ln2_beta),
                                  true);
      // x_mid = x_in + mask1 * proj
      for (std::size_t i = 0; i < dx.data.size(); ++i) dbranch.data[i] = dx.data[i] * bc.mask1[i];
      kernels::linear_backward(bc.att.view(), p_.mat(bt.proj_w), dbranch.view(), datt.view(),
                               gview(bt.proj_w), gvec(bt.proj_b));
      kernels::attention_backward(bc.qkv.view(), shape, bc.probs, datt.view(), dqkv.view());
      kernels::linear_backward(bc.ln1.view(), p_.mat(bt.qkv_w), dqkv.view(), dln.view(),
                               gview(bt.qkv_w), gvec(bt.qkv_b));
      kernels::layernorm_backward(bc.x_in.view(), p_.vec(bt.ln1_gamma), bc.ln1_mean, bc.ln1_rstd,
                                  dln.view(), dx.view(), gvec(bt.ln1_gamma), gvec(bt.ln1_beta),
                                  true);
    }
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= emb_mask_[i];

    auto gtok = gview(l_.token_embedding);
    auto gpos = gview(l_.position_embedding);
    auto gaw = gvec(l_.age_w);
    auto gab = gvec(l_.age_b);
    for (std::size_t s = 0; s < n_; ++s) {
      const double a = ages_[s] / c_.age_scale;
      for (std::size_t c = 0; c < d; ++c) {
        const double g = age_pre_(s, c) > 0.0 ? dx(s * s_, c) : 0.0;
        gaw[c] += g * a;
        gab[c] += g;
      }
      for (std::size_t i = 0; i < t_; ++i) {
        double* gt = gtok.row(static_cast<std::size_t>(tokens_[s * t_ + i]));
        double* gp = gpos.row(i);
        for (std::size_t c = 0; c < d; ++c) {
          gt[c] += dx(s * s_ + i + 1, c);
          gp[c] += dx(s * s_ + i + 1, c);
        }
      }
    }
  }

 private:
  const Parameters& p_;
  const ModelConfig& c_;
  const ParameterLayout& l_;
  std::size_t n_ = 0, t_ = 0, s_ = 0, r_ = 0;
  Mode mode_ = Mode::Eval;
  std::vector<double> ages_;
  std::vector<TokenId> tokens_;
  Matrix age_pre_;
  std::vector<double> emb_mask_;
  std::vector<BlockCache> blocks_;
  Matrix x_final_, lnf_;
  std::vector<double> lnf_mean_, lnf_rstd_;
  Matrix logits_;
};

std::size_t scored_positions(const TrainingSample& s, const ModelConfig& c) {
  return c.score_age_position ? s.tokens.size() : s.tokens.size() - 1;
}

}  // namespace

Matrix forward(const Parameters& params, double age_months, std::span<const TokenId> tokens,
               Mode mode, Rng* rng) {
  Engine e(params);
  const double ages[] = {age_months};
  e.forward(ages, tokens, 1, tokens.size(), mode, rng);
  return std::move(e.logits());
}

std::vector<TrainingSample> make_samples(const std::vector<BinStream>& streams,
                                         std::size_t seq_len) {
  std::vector<TrainingSample> out;
  for (const auto& s : streams) {
    for (std::size_t start = 0; start + seq_len + 1 <= s.ids.size(); start += seq_len) {
      TrainingSample sample;
      sample.tokens.assign(s.ids.begin() + static_cast<std::ptrdiff_t>(start),
                           s.ids.begin() + static_cast<std::ptrdiff_t>(start + seq_len + 1));
      sample.age_months = s.age_months;
      out.push_back(std::move(sample));
    }
  }
  return out;
}

double loss_and_gradient(const Parameters& params, std::span<const TrainingSample> samples,
                         Mode mode, Rng* rng, std::vector<double>* grad) {
  const auto& c = params.config();
  if (samples.empty()) throw InputError("no samples to score");
  std::size_t total_scored = 0;
  for (const auto& s : samples) {
    if (s.tokens.size() < 2) throw LengthError("a sample needs at least 2 tokens");
    total_scored += scored_positions(s, c);
  }
  if (grad) grad->assign(params.values().size(), 0.0);
  const double scale = 1.0 / static_cast<double>(total_scored);

  Engine engine(params);
  double loss_sum = 0.0;
  std::size_t i = 0;
  std::vector<double> ages;
  std::vector<TokenId> inputs;
  std::vector<int> targets;
  std::vector<double> row_loss;
  while (i < samples.size()) {
    // Chunk of equal-length samples, at most micro_batch long.
    const std::size_t len = samples[i].tokens.size();
    std::size_t j = i;
    while (j < samples.size() && j - i < c.micro_batch && samples[j].tokens.size() == len) ++j;
    const std::size_t n = j - i, t = len - 1;
    ages.clear();
    inputs.clear();
    targets.clear();
    for (std::size_t k = i; k < j; ++k) {
      ages.push_back(samples[k].age_months);
      inputs.insert(inputs.end(), samples[k].tokens.begin(), samples[k].tokens.end() - 1);
      for (std::size_t r = 0; r < len; ++r) {
        targets.push_back(r == 0 && !c.score_age_position ? -1 : samples[k].tokens[r]);
      }
    }
    engine.forward(ages, inputs, n, t, mode, rng);
    row_loss.assign(engine.rows(), 0.0);
    Matrix dlogits;
    if (grad) dlogits = Matrix(engine.rows(), c.vocab_size);
    kernels::softmax_cross_entropy(engine.logits().view(), targets, scale, row_loss,
                                   grad ? dlogits.view() : MatView{});
    for (double l : row_loss) loss_sum += l;
    if (grad) engine.backward(dlogits, *grad);
    i = j;
  }
  return loss_sum * scale;
}

double lm_loss(const Parameters& params, const TrainingSample& sample) {
  return loss_and_gradient(params, std::span(&sample, 1), Mode::Eval, nullptr, nullptr);
}

double evaluate_loss(const Parameters& params, std::span<const TrainingSample> samples) {
  return loss_and_gradient(params, samples, Mode::Eval, nullptr, nullptr);
}

std::vector<double> token_logprobs(const Parameters& params, double age_months,
                                   std::span<const TokenId> tokens) {
  const auto& c = params.config();
  std::vector<double> out;
  // Without a trained age-position output, each later window re-reads the
  // previous window's last token as context instead of scoring it again.
  const std::size_t overlap = c.score_age_position ? 0 : 1;
  std::size_t start = 0;
  while (start < tokens.size()) {
    const std::size_t end = std::min(tokens.size(), start + c.seq_len + 1);
    const std::size_t len = end - start;
    const Matrix logits =
        forward(params, age_months, tokens.subspan(start, std::max<std::size_t>(len - 1, 1)));
    for (std::size_t r = (start > 0 ? overlap : 0); r < len; ++r) {
      auto row = logits.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      out.push_back(row[static_cast<std::size_t>(tokens[start + r])] - mx - std::log(z));
    }
    if (end == tokens.size()) break;
    start = end - overlap;
  }
  return out;
}

GradientCheckResult gradient_check(const Parameters& params, const TrainingSample& sample,
                                   std::size_t n_params, std::uint64_t seed, double step,
                                   std::optional<std::string> corrupt_tensor) {
  if (sample.tokens.size() < 2) throw LengthError("gradient check needs a sample of >= 2 tokens");
  std::vector<double> analytic;
  loss_and_gradient(params, std::span(&sample, 1), Mode::Eval, nullptr, &analytic);
  const auto& layout = params.layout();
  if (corrupt_tensor) {
    auto idx = layout.find(*corrupt_tensor);
    if (!idx) throw ConfigError("unknown tensor '" + *corrupt_tensor + "'");
    const auto& t = layout.tensors[*idx];
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) analytic[i] = -analytic[i];
  }

  std::vector<std::size_t> indices(params.values().size());
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(seed);
  rng.shuffle(indices);
  indices.resize(std::min(n_params, indices.size()));

  auto tensor_of = [&](std::size_t flat) -> const std::string& {
    for (const auto& t : layout.tensors) {
      if (flat >= t.offset && flat < t.offset + t.size()) return t.name;
    }
    return layout.tensors.back().name;
  };

  Parameters probe = params;
  GradientCheckResult result;
  for (std::size_t idx : indices) {
    const double orig = probe.values()[idx];
    probe.values()[idx] = orig + step;
    const double plus = lm_loss(probe, sample);
    probe.values()[idx] = orig - step;
    const double minus = lm_loss(probe, sample);
    probe.values()[idx] = orig;
    const double numeric = (plus - minus) / (2.0 * step);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_tensor = tensor_of(idx);
    }
    ++result.checked;
  }
  return result;
}

bool EarlyStopping::observe(double loss) {
  ++epochs_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epochs_;
    since_improvement_ = 0;
    return true;
  }
  ++since_improvement_;
  return false;
}

AdamOptimizer::AdamOptimizer(std::size_t n, double lr, double beta1, double beta2, double eps)
    : m_(n, 0.0), v_(n, 0.0), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(std::vector<double>& params, const std::vector<double>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto n = static_cast<std::int64_t>(params.size());
#pragma omp parallel for schedule(static) if (n >= (1 << 16))
  for (std::int64_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

TrainResult train(Parameters init, std::span<const TrainingSample> train_samples,
                  std::span<const TrainingSample> validation_samples, Rng& rng,
                  const EpochCallback& on_epoch) {
  if (train_samples.empty() || validation_samples.empty()) {
    throw InputError("training and validation sample sets must be non-empty");
  }
  const auto c = init.config();
  TrainResult result;
  Parameters current = std::move(init);
  AdamOptimizer adam(current.values().size(), c.learning_rate);
  EarlyStopping stopper(c.patience);
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  std::vector<TrainingSample> batch;
  result.best = current;

  for (std::size_t epoch = 1; epoch <= c.max_epochs; ++epoch) {
    rng.shuffle(order);
    double weighted_loss = 0.0;
    std::size_t positions = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t end = std::min(order.size(), start + c.batch_size);
      batch.clear();
      std::size_t batch_positions = 0;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train_samples[order[k]]);
        batch_positions += scored_positions(batch.back(), c);
      }
      const double loss = loss_and_gradient(current, batch, Mode::Train, &rng, &grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      weighted_loss += loss * static_cast<double>(batch_positions);
      positions += batch_positions;
      adam.step(current.values(), grad);
    }
    const double val = evaluate_loss(current, validation_samples);
    if (!std::isfinite(val)) {
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    EpochRecord rec{epoch, weighted_loss / static_cast<double>(positions), val};
    result.history.push_back(rec);
    if (stopper.observe(val)) {
      result.best = current;
      result.best_epoch = epoch;
      result.best_validation_loss = val;
    }
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'D', 'S', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw SchemaError(path.string() + ": truncated checkpoint");
  }
  return v;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["config"] = params.config();
  header["vocab_checksum"] = meta.vocab_checksum;
  header["rng_seed"] = meta.rng_seed;
  header["epoch"] = meta.epoch;
  header["validation_loss"] = meta.validation_loss;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& t : params.layout().tensors) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& values = params.values();
  write_pod(out, static_cast<std::uint64_t>(values.size()));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  Fnv1a h;
  h.update(values.data(), values.size() * sizeof(double));
  write_pod(out, h.digest());
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw SchemaError(path.string() + " is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw SchemaError(path.string() + ": checkpoint version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = read_pod<std::uint64_t>(in, path);
  if (header_len > (1u << 24)) throw SchemaError(path.string() + ": implausible header size");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw SchemaError(path.string() + ": truncated checkpoint header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  ModelConfig config = header.at("config").get<ModelConfig>();
  Checkpoint ck{Parameters(config), {}};
  ck.meta.vocab_checksum = header.value("vocab_checksum", "");
  ck.meta.rng_seed = header.value("rng_seed", std::uint64_t{0});
  ck.meta.epoch = header.value("epoch", std::size_t{0});
  ck.meta.validation_loss = header.value("validation_loss", 0.0);

  const auto& layout = ck.params.layout();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != layout.tensors.size()) {
    throw SchemaError(path.string() + ": tensor list does not match the configuration");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].at("name") != layout.tensors[i].name ||
        tensors[i].at("rows") != layout.tensors[i].rows ||
        tensors[i].at("cols") != layout.tensors[i].cols) {
      throw SchemaError(path.string() + ": tensor '" + layout.tensors[i].name + "' shape mismatch");
    }
  }
  const auto count = read_pod<std::uint64_t>(in, path);
  auto& values = ck.params.values();
  if (count != values.size()) throw SchemaError(path.string() + ": parameter count mismatch");
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw SchemaError(path.string() + ": truncated checkpoint");
  }
  const auto digest = read_pod<std::uint64_t>(in, path);
  Fnv1a h;
  h.update(values.data(), values.size() * sizeof(double));
  if (digest != h.digest()) throw SchemaError(path.string() + ": parameter checksum mismatch");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ck = load_checkpoint(path);
  if (!ck.params.config().same_architecture(expected)) {
    throw SchemaError(path.string() + ": checkpoint architecture (vocab_size " +
                      std::to_string(ck.params.config().vocab_size) +
                      ") does not match the configuration (vocab_size " +
                      std::to_string(expected.vocab_size) + ")");
  }
  return ck;
}

}  // namespace cdsgen
