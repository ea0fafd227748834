#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdsgen/kernels.hpp"
#include "cdsgen/rng.hpp"
#include "cdsgen/tokenizer.hpp"

namespace cdsgen {

struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t n_blocks = 5;
  std::size_t n_heads = 8;
  double dropout = 0.05;
  std::size_t seq_len = 100;
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t ffn_dim = 2048;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t patience = 15;
  double age_scale = 84.0;
  // When false the output at the age position is not scored.
  bool score_age_position = true;
  std::size_t max_epochs = 1000;
  // Samples per forward/backward chunk inside a minibatch (memory bound only).
  std::size_t micro_batch = 8;
  double init_std = 0.02;

  // Throws ConfigError.
  void validate() const;
  bool same_architecture(const ModelConfig& other) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct BlockTensors {
  std::size_t ln1_gamma, ln1_beta, qkv_w, qkv_b, proj_w, proj_b;
  std::size_t ln2_gamma, ln2_beta, fc_w, fc_b, out_w, out_b;
};

// Named slices of the flat parameter vector.
struct ParameterLayout {
  std::vector<TensorInfo> tensors;
  std::size_t token_embedding, position_embedding, age_w, age_b;
  std::vector<BlockTensors> blocks;
  std::size_t final_ln_gamma, final_ln_beta, head_w, head_b;
  std::size_t total = 0;

  static ParameterLayout build(const ModelConfig& config);
  std::optional<std::size_t> find(std::string_view name) const;
};

class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(ModelConfig config);  // zero-filled

  // Scaled-normal initialization; layer-norm gains start at 1, biases at 0.
  static Parameters initialize(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  MatView mat(std::size_t tensor) { return view(values_, tensor); }
  ConstMatView mat(std::size_t tensor) const { return view(values_, tensor); }
  std::span<const double> vec(std::size_t tensor) const {
    const auto& t = layout_.tensors[tensor];
    return {values_.data() + t.offset, t.size()};
  }

  MatView view(std::vector<double>& flat, std::size_t tensor) const {
    const auto& t = layout_.tensors[tensor];
    return {flat.data() + t.offset, t.rows, t.cols};
  }
  ConstMatView view(const std::vector<double>& flat, std::size_t tensor) const {
    const auto& t = layout_.tensors[tensor];
    return {flat.data() + t.offset, t.rows, t.cols};
  }

  bool all_finite() const;

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<double> values_;
};

struct Matrix {
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : data(r * c, 0.0), rows(r), cols(c) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  MatView view() { return {data.data(), rows, cols}; }
  ConstMatView view() const { return {data.data(), rows, cols}; }
};

enum class Mode { Train, Eval };

// Logits for the sequence [age] ++ tokens: (T+1) rows of vocab_size columns.
// Row 0 is the age position. Train mode applies dropout drawn from `rng`.
// Throws LengthError if T is 0 or exceeds seq_len, RangeError on a bad id.
Matrix forward(const Parameters& params, double age_months, std::span<const TokenId> tokens,
               Mode mode = Mode::Eval, Rng* rng = nullptr);

struct TrainingSample {
  std::vector<TokenId> tokens;  // inputs are tokens[0..n-2]; targets are tokens[0..n-1]
  double age_months = 0.0;
};

// Non-overlapping windows of seq_len + 1 tokens with stride seq_len inside
// each bin stream; the trailing remainder is dropped.
std::vector<TrainingSample> make_samples(const std::vector<BinStream>& streams,
                                         std::size_t seq_len);

// Mean cross-entropy (nats) of one sample in eval mode.
double lm_loss(const Parameters& params, const TrainingSample& sample);

// Mean per-position loss over `samples`; writes d(mean loss)/d(params) into
// grad (resized and overwritten) when grad is non-null.
double loss_and_gradient(const Parameters& params, std::span<const TrainingSample> samples,
                         Mode mode, Rng* rng, std::vector<double>* grad);

// Mean per-position loss in eval mode.
double evaluate_loss(const Parameters& params, std::span<const TrainingSample> samples);

// Per-token natural-log probabilities of `tokens` conditioned on age. Strings
// longer than seq_len are scored in consecutive windows.
std::vector<double> token_logprobs(const Parameters& params, double age_months,
                                   std::span<const TokenId> tokens);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
};

// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradientCheckFloor = 1e-7;

// Compares the analytic gradient of lm_loss against central differences.
// `corrupt_tensor` flips the sign of that tensor's analytic gradient.
GradientCheckResult gradient_check(const Parameters& params, const TrainingSample& sample,
                                   std::size_t n_params = 256, std::uint64_t seed = 7,
                                   double step = 1e-4,
                                   std::optional<std::string> corrupt_tensor = std::nullopt);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  // Returns true when `loss` is a new best.
  bool observe(double loss);
  bool should_stop() const { return since_improvement_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_improvement_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  double best_ = INFINITY;
  std::size_t best_epoch_ = 0;
  std::size_t since_improvement_ = 0;
  std::size_t epochs_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  Parameters best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_validation_loss = INFINITY;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  std::vector<double> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Shuffled minibatches with Adam, validation after each epoch, early stopping
// on patience; returns the best-validation parameters. Throws DivergenceError.
TrainResult train(Parameters init, std::span<const TrainingSample> train_samples,
                  std::span<const TrainingSample> validation_samples, Rng& rng,
                  const EpochCallback& on_epoch = {});

struct CheckpointMeta {
  std::string vocab_checksum;
  std::uint64_t rng_seed = 0;
  std::size_t epoch = 0;
  double validation_loss = 0.0;
};

struct Checkpoint {
  Parameters params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const CheckpointMeta& meta);
// Throws SchemaError on a truncated, corrupt or version-mismatched file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Additionally rejects checkpoints whose architecture differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace cdsgen
