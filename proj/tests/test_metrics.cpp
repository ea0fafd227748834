#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "cdsgen/errors.hpp"
#include "cdsgen/metrics.hpp"

using namespace cdsgen;

namespace {

// Jensen-Shannon divergence written directly from its definition.
double jsd_oracle(const std::map<std::string, double>& p, const std::map<std::string, double>& q) {
  std::set<std::string> keys;
  for (const auto& [k, v] : p) keys.insert(k);
  for (const auto& [k, v] : q) keys.insert(k);
  double d = 0.0;
  for (const auto& k : keys) {
    const double a = p.count(k) ? p.at(k) : 0.0, b = q.count(k) ? q.at(k) : 0.0;
    const double m = 0.5 * (a + b);
    if (a > 0) d += 0.5 * a * std::log2(a / m);
    if (b > 0) d += 0.5 * b * std::log2(b / m);
  }
  return d;
}

FrequencyDistribution dist(std::map<std::string, double> p) {
  FrequencyDistribution f;
  f.probabilities = std::move(p);
  f.total_count = 1;
  return f;
}

}  // namespace

TEST_CASE("type-token ratio") {
  std::vector<std::string> dogs = {"dog", "dog", "dog"};
  CHECK(ttr(dogs) == 1.0 / 3.0);
  std::vector<std::string> mixed = {"a", "b", "a", "c"};
  CHECK(ttr(mixed) == 0.75);
  CHECK_THROWS_AS(ttr(std::span<const std::string>{}), UndefinedMeasureError);
}

TEST_CASE("mean utterance length") {
  std::vector<Utterance> us = {{{"go", "ahead"}, 6, "x"}, {{"look"}, 6, "x"}, {{"a", "b", "c"}, 6, "x"}};
  CHECK(mean_utterance_length(us) == 2.0);
  CHECK_THROWS_AS(mean_utterance_length(std::span<const Utterance>{}), UndefinedMeasureError);
  std::vector<std::size_t> counts = {1, 2, 6};
  CHECK(mean_of_counts(counts) == 3.0);
}

TEST_CASE("frequency distributions") {
  std::vector<std::string> items = {"a", "b", "a", "c", "a", "b"};
  auto f = FrequencyDistribution::from_items(items);
  CHECK(f.total_count == 6);
  CHECK(f.probabilities["a"] == doctest::Approx(0.5));
  auto g = FrequencyDistribution::from_items(items, 2);
  CHECK(g.support_size() == 2);
  CHECK(g.probabilities["a"] == doctest::Approx(0.6));
  CHECK_THROWS_AS(FrequencyDistribution::from_items(items, 4), UndefinedMeasureError);
}

TEST_CASE("Jensen-Shannon divergence") {
  auto p = dist({{"a", 0.5}, {"b", 0.5}});
  auto q = dist({{"a", 1.0}});
  CHECK(jsd(p, q) == doctest::Approx(jsd_oracle(p.probabilities, q.probabilities)).epsilon(1e-12));
  CHECK(jsd(p, q) == doctest::Approx(0.3113).epsilon(1e-3));
  CHECK(jsd(p, p) == 0.0);
  CHECK(std::abs(jsd(dist({{"a", 1.0}}), dist({{"b", 1.0}})) - 1.0) < 1e-12);
  CHECK(jsd(p, q) == jsd(q, p));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, double> a, b;
    double sa = 0, sb = 0;
    for (int k = 0; k < 8; ++k) {
      if (rng.uniform() < 0.7) sa += (a[std::to_string(k)] = rng.uniform());
      if (rng.uniform() < 0.7) sb += (b[std::to_string(k)] = rng.uniform());
    }
    if (a.empty() || b.empty()) continue;
    for (auto& [k, v] : a) v /= sa;
    for (auto& [k, v] : b) v /= sb;
    const double d = jsd(dist(a), dist(b));
    CHECK(d == doctest::Approx(jsd_oracle(a, b)).epsilon(1e-10));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("lexical divergence filters rare items") {
  std::vector<std::string> s = {"a", "a", "b", "b", "z"};
  std::vector<std::string> r = {"a", "a", "a", "a", "b", "b", "y"};
  // Per-sample filter drops z and y: {a:.5,b:.5} vs {a:2/3,b:1/3}.
  const double expected = jsd_oracle({{"a", 0.5}, {"b", 0.5}}, {{"a", 2.0 / 3}, {"b", 1.0 / 3}});
  CHECK(lexical_divergence(s, r) == doctest::Approx(expected).epsilon(1e-12));
  std::vector<std::string> s2 = {"a", "a", "q"};
  std::vector<std::string> r2 = {"a", "q", "q"};
  // Joint filter keeps q (2 occurrences overall).
  const double joint = jsd_oracle({{"a", 2.0 / 3}, {"q", 1.0 / 3}}, {{"a", 1.0 / 3}, {"q", 2.0 / 3}});
  CHECK(lexical_divergence(s2, r2, LexicalFilter::Joint) == doctest::Approx(joint).epsilon(1e-12));
}

TEST_CASE("perplexity") {
  std::vector<double> uniform(37, -std::log(11.0));
  CHECK(std::abs(perplexity(uniform) - 11.0) < 1e-12);
  std::vector<double> lp = {std::log(0.5), std::log(0.25)};
  CHECK(perplexity(lp) == doctest::Approx(std::sqrt(8.0)));
  CHECK_THROWS_AS(perplexity(std::span<const double>{}), InputError);
  std::vector<double> bad = {-1.0, NAN};
  CHECK_THROWS_AS(perplexity(bad), InputError);
}

TEST_CASE("quadratic fit") {
  std::vector<std::pair<double, double>> pts;
  for (double x : {6.0, 12.0, 24.0, 36.0, 48.0}) pts.push_back({x, 2 * x * x + 1});
  auto f = quadratic_fit(pts);
  CHECK(std::abs(f.a - 2.0) < 1e-9);
  CHECK(std::abs(f.b) < 1e-9);
  CHECK(std::abs(f.c - 1.0) < 1e-9);
  CHECK(f.rss < 1e-12);

  // Normal-equation oracle on noisy data.
  Rng rng(2);
  std::vector<std::pair<double, double>> noisy;
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d aty = Eigen::Vector3d::Zero();
  for (int i = 0; i < 30; ++i) {
    const double x = 3 + 3 * (i % 10), y = 0.1 * x * x - x + 4 + rng.normal();
    noisy.push_back({x, y});
    Eigen::Vector3d row(x * x, x, 1.0);
    ata += row * row.transpose();
    aty += row * y;
  }
  Eigen::Vector3d sol = ata.ldlt().solve(aty);
  auto g = quadratic_fit(noisy);
  CHECK(g.a == doctest::Approx(sol(0)).epsilon(1e-8));
  CHECK(g.b == doctest::Approx(sol(1)).epsilon(1e-8));
  CHECK(g.c == doctest::Approx(sol(2)).epsilon(1e-8));
  double rss = 0.0;
  for (auto [x, y] : noisy) rss += (y - g(x)) * (y - g(x));
  CHECK(g.rss == doctest::Approx(rss));

  std::vector<std::pair<double, double>> two = {{1, 1}, {2, 2}, {2, 3}, {1, 0}};
  CHECK_THROWS_AS(quadratic_fit(two), RankError);
}

TEST_CASE("contiguous strings meet the word minimum") {
  std::vector<std::size_t> words = {3, 1, 4, 1, 5, 9, 2, 6};
  Rng rng(4);
  auto ranges = sample_contiguous_strings(words, 5, 10, rng);
  CHECK(ranges.size() == 5);
  std::set<std::size_t> starts;
  for (auto [a, b] : ranges) {
    std::size_t n = 0;
    for (std::size_t i = a; i < b; ++i) n += words[i];
    CHECK(n >= 10);
    // minimal: dropping the last utterance falls short
    CHECK(n - words[b - 1] < 10);
    starts.insert(a);
  }
  CHECK(starts.size() == 5);
  CHECK(sample_contiguous_strings(words, 3, 1000, rng).empty());
}

TEST_CASE("word-budget subsamples stop at the first crossing") {
  std::vector<std::size_t> words = {3, 5, 2, 8, 1};
  BootstrapSettings s;
  s.word_budget = 20;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto idx = draw_subsample(words, SampleUnit::Words, s, rng);
    std::size_t total = 0;
    for (auto j : idx) total += words[j];
    CHECK(total >= 20);
    CHECK(total - words[idx.back()] < 20);
  }
  s.utterance_count = 7;
  CHECK(draw_subsample(words, SampleUnit::Utterances, s, rng).size() == 7);
}

TEST_CASE("bootstrap values are reproducible and order independent") {
  std::vector<std::size_t> words(50);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = 1 + i % 7;
  BootstrapSettings s{30, 40, 10, 99};
  auto fn = [&](std::span<const std::size_t> units, Rng&) {
    double t = 0;
    for (auto u : units) t += words[u];
    return t / units.size();
  };
  auto a = bootstrap("mlu", "real", 12, words, SampleUnit::Words, s, fn);
  auto b = bootstrap("mlu", "real", 12, words, SampleUnit::Words, s, fn);
  CHECK(a.values == b.values);
  CHECK(a.values.size() == 30);
  CHECK(a.missing() == 0);
  auto c = bootstrap("mlu", "real", 15, words, SampleUnit::Words, s, fn);
  CHECK(a.values != c.values);

  int calls = 0;
  auto sometimes = [&](std::span<const std::size_t>, Rng& r) -> double {
    ++calls;
    if (r.uniform() < 0.3) throw UndefinedMeasureError("empty");
    return 1.0;
  };
  auto d = bootstrap("x", "real", 3, words, SampleUnit::Utterances, s, sometimes);
  CHECK(d.missing() > 0);
  CHECK(d.present().size() + d.missing() == 30);
}

TEST_CASE("summaries") {
  std::vector<double> v = {4, 1, 3, 2, 5};
  auto s = summarize(v);
  CHECK(s.n == 5);
  CHECK(s.min == 1);
  CHECK(s.q1 == 2);
  CHECK(s.median == 3);
  CHECK(s.q3 == 4);
  CHECK(s.max == 5);
  CHECK(s.mean == 3);
  CHECK(s.sd == doctest::Approx(std::sqrt(2.5)));
  CHECK_THROWS(summarize(std::span<const double>{}));
}
