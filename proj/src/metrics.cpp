#include "cdsgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include <Eigen/Dense>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"

namespace cdsgen {

double ttr(std::span<const std::string> lemmas) {
  if (lemmas.empty()) throw UndefinedMeasureError("TTR of an empty sample");
  std::unordered_set<std::string_view> types;
  for (const auto& l : lemmas) types.insert(l);
  return static_cast<double>(types.size()) / static_cast<double>(lemmas.size());
}

double mean_of_counts(std::span<const std::size_t> counts) {
  if (counts.empty()) throw UndefinedMeasureError("mean of an empty sample");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  return total / static_cast<double>(counts.size());
}

double mean_utterance_length(std::span<const Utterance> utterances) {
  std::vector<std::size_t> counts;
  counts.reserve(utterances.size());
  for (const auto& u : utterances) counts.push_back(u.words.size());
  return mean_of_counts(counts);
}

FrequencyDistribution FrequencyDistribution::from_counts(
    const std::map<std::string, std::size_t>& counts) {
  FrequencyDistribution d;
  for (const auto& [k, c] : counts) d.total_count += c;
  if (d.total_count == 0) throw UndefinedMeasureError("frequency distribution has no mass");
  for (const auto& [k, c] : counts) {
    if (c > 0) d.probabilities[k] = static_cast<double>(c) / static_cast<double>(d.total_count);
  }
  return d;
}

FrequencyDistribution FrequencyDistribution::from_items(std::span<const std::string> items,
                                                        std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& i : items) ++counts[i];
  std::erase_if(counts, [&](const auto& kv) { return kv.second < min_count; });
  if (counts.empty()) throw UndefinedMeasureError("no items left after frequency filtering");
  return from_counts(counts);
}

double jsd(const FrequencyDistribution& p, const FrequencyDistribution& q) {
  // Sum over the union support; an item absent from one side only
  // contributes through the mixture.
  double kl_p = 0.0, kl_q = 0.0;
  auto ip = p.probabilities.begin();
  auto iq = q.probabilities.begin();
  while (ip != p.probabilities.end() || iq != q.probabilities.end()) {
    double pv = 0.0, qv = 0.0;
    if (iq == q.probabilities.end() || (ip != p.probabilities.end() && ip->first < iq->first)) {
      pv = (ip++)->second;
    } else if (ip == p.probabilities.end() || iq->first < ip->first) {
      qv = (iq++)->second;
    } else {
      pv = (ip++)->second;
      qv = (iq++)->second;
    }
    const double m = 0.5 * (pv + qv);
    if (pv > 0.0) kl_p += pv * std::log2(pv / m);
    if (qv > 0.0) kl_q += qv * std::log2(qv / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0);
}

double lexical_divergence(std::span<const std::string> sample,
                          std::span<const std::string> reference, LexicalFilter filter) {
  if (filter == LexicalFilter::PerSample) {
    return jsd(FrequencyDistribution::from_items(sample, 2),
               FrequencyDistribution::from_items(reference, 2));
  }
  std::map<std::string, std::size_t> joint, cs, cr;
  for (const auto& s : sample) ++joint[s], ++cs[s];
  for (const auto& r : reference) ++joint[r], ++cr[r];
  auto keep = [&](std::map<std::string, std::size_t>& m) {
    std::erase_if(m, [&](const auto& kv) { return joint[kv.first] < 2; });
    if (m.empty()) throw UndefinedMeasureError("no items left after joint frequency filtering");
  };
  keep(cs);
  keep(cr);
  return jsd(FrequencyDistribution::from_counts(cs), FrequencyDistribution::from_counts(cr));
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw InputError("perplexity needs at least one scored token");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw InputError("non-finite log-probability");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

std::vector<std::pair<std::size_t, std::size_t>> sample_contiguous_strings(
    std::span<const std::size_t> utterance_words, std::size_t count, std::size_t min_words,
    Rng& rng) {
  // ends[i]: one past the last utterance of the shortest valid string starting at i.
  const std::size_t n = utterance_words.size();
  min_words = std::max<std::size_t>(min_words, 1);
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  std::size_t end = 0, words = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (end < start) end = start, words = 0;
    while (end < n && words < min_words) words += utterance_words[end++];
    if (words < min_words) break;
    candidates.emplace_back(start, end);
    words -= utterance_words[start];
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (candidates.empty() || count == 0) return out;
  if (candidates.size() >= count) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + rng.below(candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
      out.push_back(candidates[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.push_back(candidates[rng.below(candidates.size())]);
  }
  return out;
}

QuadraticFit quadratic_fit(std::span<const std::pair<double, double>> points) {
  std::set<double> distinct;
  for (const auto& [x, y] : points) distinct.insert(x);
  if (distinct.size() < 3) {
    throw RankError("quadratic fit needs at least 3 distinct x values, got " +
                    std::to_string(distinct.size()));
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = points[static_cast<std::size_t>(i)].first;
    design(i, 0) = x * x;
    design(i, 1) = x;
    design(i, 2) = 1.0;
    y(i) = points[static_cast<std::size_t>(i)].second;
  }
  const Eigen::Vector3d coef = design.colPivHouseholderQr().solve(y);
  QuadraticFit fit{coef(0), coef(1), coef(2), 0.0};
  for (const auto& [x, yv] : points) {
    const double r = yv - fit(x);
    fit.rss += r * r;
  }
  return fit;
}

std::vector<std::size_t> draw_subsample(std::span<const std::size_t> unit_words, SampleUnit unit,
                                        const BootstrapSettings& settings, Rng& rng) {
  std::vector<std::size_t> out;
  if (unit_words.empty()) return out;
  if (unit == SampleUnit::Utterances) {
    out.reserve(settings.utterance_count);
    for (std::size_t i = 0; i < settings.utterance_count; ++i) {
      out.push_back(rng.below(unit_words.size()));
    }
    return out;
  }
  if (std::all_of(unit_words.begin(), unit_words.end(), [](std::size_t w) { return w == 0; })) {
    return out;
  }
  std::size_t words = 0;
  while (words < settings.word_budget) {
    const auto i = rng.below(unit_words.size());
    out.push_back(i);
    words += unit_words[i];
  }
  return out;
}

std::size_t MeasureDistribution::missing() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](const auto& v) { return !v.has_value(); }));
}

std::vector<double> MeasureDistribution::present() const {
  std::vector<double> out;
  for (const auto& v : values) {
    if (v) out.push_back(*v);
  }
  return out;
}

std::uint64_t stable_key(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

MeasureDistribution bootstrap(const std::string& measure, const std::string& corpus_tag, int age,
                              std::span<const std::size_t> unit_words, SampleUnit unit,
                              const BootstrapSettings& settings, const SubsampleMeasure& fn) {
  MeasureDistribution dist{measure, corpus_tag, age, {}};
  dist.values.resize(settings.n_subsamples);
  const auto n = static_cast<std::int64_t>(settings.n_subsamples);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(settings.seed, {stable_key(measure), stable_key(corpus_tag),
                                        static_cast<std::uint64_t>(age),
                                        static_cast<std::uint64_t>(i)}));
    const auto units = draw_subsample(unit_words, unit, settings, rng);
    if (units.empty()) continue;
    try {
      dist.values[static_cast<std::size_t>(i)] = fn(units, rng);
    } catch (const UndefinedMeasureError&) {
    } catch (const InputError&) {
    }
  }
  return dist;
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw UndefinedMeasureError("summary of an empty distribution");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  Summary s;
  s.n = v.size();
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

}  // namespace cdsgen
