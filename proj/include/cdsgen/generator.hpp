#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cdsgen/corpus.hpp"
#include "cdsgen/model.hpp"
#include "cdsgen/rng.hpp"
#include "cdsgen/tokenizer.hpp"

namespace cdsgen {

struct GenerationSpec {
  std::vector<double> ages = {6, 9, 12, 15, 18, 21, 24, 36, 48};
  std::size_t runs_per_age = 2000;
  std::size_t top_k = 500;
  double temperature = 1.0;
  // Seed plus generated tokens.
  std::size_t max_tokens = 60;
  std::size_t seed_len_min = 1;
  std::size_t seed_len_max = 4;
  std::uint64_t rng_seed = 0;

  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const GenerationSpec& s);
void from_json(const nlohmann::json& j, GenerationSpec& s);

// Contiguous tokens from a uniform position of the concatenated streams;
// the length is uniform over [min_len, max_len] (clamped to the data size).
TokenSequence draw_seed(const std::vector<BinStream>& streams, Rng& rng, std::size_t min_len = 1,
                        std::size_t max_len = 4);

// Softmax of logits / temperature.
std::vector<double> posterior(std::span<const double> logits, double temperature = 1.0);

// Keeps the top_k most probable tokens (ties to the lower id), renormalizes
// and samples.
TokenId sample_from_posterior(std::span<const double> probs, std::size_t top_k, Rng& rng);

// Observer for each sampling step: (posterior, chosen id).
using SampleObserver = std::function<void(std::span<const double>, TokenId)>;

// Samples the continuation of [age] ++ context. Contexts longer than seq_len
// keep their most recent seq_len tokens.
TokenId sample_next(const Parameters& params, double age_months,
                    std::span<const TokenId> context, std::size_t top_k, double temperature,
                    Rng& rng, const SampleObserver& observer = {});

// Splits seed ++ generated at full stops, dropping every utterance that
// overlaps the seed and a trailing utterance without a full stop.
std::vector<Utterance> trim_generated(const TokenSequence& tokens, std::size_t seed_len,
                                      const WordPieceVocab& vocab, double age_months);

struct GeneratedTranscript {
  double age_months = 0.0;
  std::vector<Utterance> utterances;
  TokenSequence seed_tokens;
  TokenSequence tokens;  // seed ++ generated
};

GeneratedTranscript generate_one(const Parameters& params, const WordPieceVocab& vocab,
                                 double age_months, const TokenSequence& seed,
                                 const GenerationSpec& spec, Rng& rng,
                                 const SampleObserver& observer = {});

struct GeneratedCorpus {
  double age_months = 0.0;
  std::vector<Utterance> utterances;
  std::size_t runs = 0;
  std::size_t empty_runs = 0;
  std::size_t words() const { return word_count(utterances); }
};

// Per-run generators are seeded from (rng_seed, age, run index), so results
// do not depend on scheduling.
std::vector<GeneratedCorpus> generate_corpus(const Parameters& params,
                                             const WordPieceVocab& vocab,
                                             const std::vector<BinStream>& seed_streams,
                                             const GenerationSpec& spec);

}  // namespace cdsgen
