#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdsgen/corpus.hpp"
#include "cdsgen/rng.hpp"

namespace cdsgen {

// Distinct / total. Throws UndefinedMeasureError on an empty list.
double ttr(std::span<const std::string> lemmas);

// Mean word count (full stops are not words). Throws UndefinedMeasureError.
double mean_utterance_length(std::span<const Utterance> utterances);
double mean_of_counts(std::span<const std::size_t> counts);

struct FrequencyDistribution {
  std::map<std::string, double> probabilities;
  std::size_t total_count = 0;

  std::size_t support_size() const { return probabilities.size(); }
  // Items with count < min_count are dropped before normalizing. Throws
  // UndefinedMeasureError when nothing remains.
  static FrequencyDistribution from_items(std::span<const std::string> items,
                                          std::size_t min_count = 1);
  static FrequencyDistribution from_counts(const std::map<std::string, std::size_t>& counts);
};

// Jensen-Shannon divergence in bits over the union support.
double jsd(const FrequencyDistribution& p, const FrequencyDistribution& q);

enum class LexicalFilter {
  PerSample,  // drop items seen < 2 times within each sample
  Joint,      // drop items seen < 2 times across both samples combined
};

double lexical_divergence(std::span<const std::string> sample,
                          std::span<const std::string> reference,
                          LexicalFilter filter = LexicalFilter::PerSample);

// exp(-mean(logprobs)). Throws InputError on an empty list or non-finite value.
double perplexity(std::span<const double> logprobs);

// Index ranges [first, last) of contiguous utterances totalling >= min_words
// words. Starts are distinct when enough exist, otherwise drawn with
// replacement. Empty when no such string exists.
std::vector<std::pair<std::size_t, std::size_t>> sample_contiguous_strings(
    std::span<const std::size_t> utterance_words, std::size_t count, std::size_t min_words,
    Rng& rng);

struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;  // a*x^2 + b*x + c
  double rss = 0.0;
  double operator()(double x) const { return (a * x + b) * x + c; }
};

// Least squares on the Vandermonde system. Throws RankError with < 3 distinct x.
QuadraticFit quadratic_fit(std::span<const std::pair<double, double>> points);

enum class SampleUnit { Words, Utterances };

struct BootstrapSettings {
  std::size_t n_subsamples = 100;
  std::size_t word_budget = 10000;
  std::size_t utterance_count = 1000;
  std::uint64_t seed = 0;
};

// Unit indices for one subsample, drawn with replacement. Word sampling draws
// whole units until their word total first reaches the budget.
std::vector<std::size_t> draw_subsample(std::span<const std::size_t> unit_words, SampleUnit unit,
                                        const BootstrapSettings& settings, Rng& rng);

struct MeasureDistribution {
  std::string measure;
  std::string corpus_tag;
  int age = 0;
  std::vector<std::optional<double>> values;  // one per subsample; nullopt = undefined

  std::size_t missing() const;
  std::vector<double> present() const;
};

using SubsampleMeasure = std::function<double(std::span<const std::size_t> units, Rng& rng)>;

// Applies `measure` to n_subsamples resamples. Each subsample has its own RNG
// stream keyed by (seed, measure, corpus tag, age, index), so the values do
// not depend on evaluation order. UndefinedMeasureError marks a value missing.
MeasureDistribution bootstrap(const std::string& measure, const std::string& corpus_tag, int age,
                              std::span<const std::size_t> unit_words, SampleUnit unit,
                              const BootstrapSettings& settings, const SubsampleMeasure& fn);

std::uint64_t stable_key(std::string_view s);

struct Summary {
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0, sd = 0;
};

// Quartiles by linear interpolation; sd uses n - 1. Throws on empty input.
Summary summarize(std::span<const double> values);

}  // namespace cdsgen
