#include "cdsgen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdsgen/errors.hpp"

namespace cdsgen {

void GenerationSpec::validate() const {
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (max_tokens < 2) throw ConfigError("max_tokens must be at least 2");
  if (seed_len_min < 1 || seed_len_min > seed_len_max || seed_len_max >= max_tokens) {
    throw ConfigError("seed length range must lie within [1, max_tokens)");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  for (double a : ages) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("generation ages must be >= 0");
  }
}

void to_json(nlohmann::json& j, const GenerationSpec& s) {
  j = nlohmann::json{{"ages", s.ages},
                     {"runs_per_age", s.runs_per_age},
                     {"top_k", s.top_k},
                     {"temperature", s.temperature},
                     {"max_tokens", s.max_tokens},
                     {"seed_len_range", {s.seed_len_min, s.seed_len_max}},
                     {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, GenerationSpec& s) {
  GenerationSpec d;
  s.ages = j.value("ages", d.ages);
  s.runs_per_age = j.value("runs_per_age", d.runs_per_age);
  s.top_k = j.value("top_k", d.top_k);
  s.temperature = j.value("temperature", d.temperature);
  s.max_tokens = j.value("max_tokens", d.max_tokens);
  if (j.contains("seed_len_range")) {
    const auto& r = j.at("seed_len_range");
    if (!r.is_array() || r.size() != 2) throw ConfigError("seed_len_range must be [min, max]");
    s.seed_len_min = r[0].get<std::size_t>();
    s.seed_len_max = r[1].get<std::size_t>();
  }
  s.rng_seed = j.value("rng_seed", d.rng_seed);
}

TokenSequence draw_seed(const std::vector<BinStream>& streams, Rng& rng, std::size_t min_len,
                        std::size_t max_len) {
  std::size_t total = 0;
  for (const auto& s : streams) total += s.ids.size();
  if (total == 0) throw InputError("cannot draw a seed from empty streams");
  auto len = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(min_len), static_cast<std::int64_t>(max_len)));
  len = std::min(len, total);
  std::size_t start = rng.below(total - len + 1);
  TokenSequence seed;
  seed.reserve(len);
  std::size_t offset = 0;
  for (const auto& s : streams) {
    const std::size_t n = s.ids.size();
    if (seed.size() < len && start < offset + n) {
      for (std::size_t i = std::max(start, offset) - offset; i < n && seed.size() < len; ++i) {
        seed.push_back(s.ids[i]);
      }
    }
    offset += n;
    if (seed.size() == len) break;
  }
  return seed;
}

std::vector<double> posterior(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

TokenId sample_from_posterior(std::span<const double> probs, std::size_t top_k, Rng& rng) {
  if (probs.empty()) throw InputError("empty posterior");
  const std::size_t k = std::min(std::max<std::size_t>(top_k, 1), probs.size());
  std::vector<TokenId> ids(probs.size());
  std::iota(ids.begin(), ids.end(), 0);
  auto better = [&](TokenId a, TokenId b) {
    return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) mass += probs[ids[i]];
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += probs[ids[i]];
    if (u < acc) return ids[i];
  }
  return ids[k - 1];
}

TokenId sample_next(const Parameters& params, double age_months,
                    std::span<const TokenId> context, std::size_t top_k, double temperature,
                    Rng& rng, const SampleObserver& observer) {
  if (context.empty()) throw InputError("sampling needs a non-empty context");
  const std::size_t limit = params.config().seq_len;
  if (context.size() > limit) context = context.subspan(context.size() - limit);
  const Matrix logits = forward(params, age_months, context, Mode::Eval);
  const auto p = posterior(logits.row(logits.rows - 1), temperature);
  const TokenId next = sample_from_posterior(p, top_k, rng);
  if (observer) observer(p, next);
  return next;
}

std::vector<Utterance> trim_generated(const TokenSequence& tokens, std::size_t seed_len,
                                      const WordPieceVocab& vocab, double age_months) {
  std::vector<Utterance> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != vocab.stop_id()) continue;
    if (begin >= seed_len) {
      TokenSequence segment(tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                            tokens.begin() + static_cast<std::ptrdiff_t>(i + 1));
      auto words = normalize_words(decode(segment, vocab));
      if (!words.empty()) out.push_back({std::move(words), age_months, "generated"});
    }
    begin = i + 1;
  }
  return out;
}

GeneratedTranscript generate_one(const Parameters& params, const WordPieceVocab& vocab,
                                 double age_months, const TokenSequence& seed,
                                 const GenerationSpec& spec, Rng& rng,
                                 const SampleObserver& observer) {
  if (seed.empty()) throw InputError("generation needs a non-empty seed");
  GeneratedTranscript t;
  t.age_months = age_months;
  t.seed_tokens = seed;
  t.tokens = seed;
  while (t.tokens.size() < spec.max_tokens) {
    t.tokens.push_back(
        sample_next(params, age_months, t.tokens, spec.top_k, spec.temperature, rng, observer));
  }
  t.utterances = trim_generated(t.tokens, seed.size(), vocab, age_months);
  return t;
}

std::vector<GeneratedCorpus> generate_corpus(const Parameters& params,
                                             const WordPieceVocab& vocab,
                                             const std::vector<BinStream>& seed_streams,
                                             const GenerationSpec& spec) {
  spec.validate();
  if (vocab.size() != params.config().vocab_size) {
    throw SchemaError("vocabulary size does not match the model");
  }
  std::vector<GeneratedCorpus> out;
  for (double age : spec.ages) {
    GeneratedCorpus corpus;
    corpus.age_months = age;
    corpus.runs = spec.runs_per_age;
    std::vector<std::vector<Utterance>> runs(spec.runs_per_age);
    const auto age_key = static_cast<std::uint64_t>(std::llround(age * 1000.0));
    const auto n = static_cast<std::int64_t>(spec.runs_per_age);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t r = 0; r < n; ++r) {
      Rng rng(derive_seed(spec.rng_seed, {age_key, static_cast<std::uint64_t>(r)}));
      auto seed = draw_seed(seed_streams, rng, spec.seed_len_min, spec.seed_len_max);
      runs[static_cast<std::size_t>(r)] =
          generate_one(params, vocab, age, seed, spec, rng).utterances;
    }
    for (auto& r : runs) {
      if (r.empty()) ++corpus.empty_runs;
      for (auto& u : r) corpus.utterances.push_back(std::move(u));
    }
    out.push_back(std::move(corpus));
  }
  return out;
}

}  // namespace cdsgen
