// Acceptance checks. Prints one PASS/FAIL line per criterion, followed by the
// criteria that need data or compute not available here. Exits non-zero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cdsgen/corpus.hpp"
#include "cdsgen/generator.hpp"
#include "cdsgen/metrics.hpp"
#include "cdsgen/model.hpp"
#include "cdsgen/novelty.hpp"
#include "cdsgen/pipeline.hpp"
#include "cdsgen/rng.hpp"
#include "cdsgen/tokenizer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cdsgen;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome tokenizer_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = load_config(fs::path(CDSGEN_SOURCE_DIR) / "data/toy/config.json");
  const auto loaded = load_records(config.resolve(config.raw_input), config.load);
  const auto corpus = filter_and_normalize(loaded.records, config.normalize).utterances;
  const auto vocab = train_vocab(corpus, config.vocab_size);
  std::size_t mismatches = 0, unknown = 0;
  for (const auto& u : corpus) {
    const auto ids = encode(u, vocab);
    unknown += static_cast<std::size_t>(std::count(ids.begin(), ids.end(), vocab.unk_id()));
    if (decode(ids, vocab) != serialize(u)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {corpus.size() >= 5000 && mismatches == 0 && unknown == 0 && secs < 10.0,
          std::to_string(corpus.size()) + " utterances, " + std::to_string(mismatches) +
              " mismatches, " + std::to_string(unknown) + " unknown pieces, " + fmt(secs, 3) +
              " s"};
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_blocks = 1;
  c.n_heads = 1;
  c.ffn_dim = 32;
  c.seq_len = 16;
  c.dropout = 0.0;
  c.init_std = 0.2;
  return c;
}

Outcome gradient_correctness() {
  Rng rng(101);
  const auto params = Parameters::initialize(tiny_config(), rng);
  TrainingSample sample{{}, 30.0};
  for (int i = 0; i < 17; ++i) sample.tokens.push_back(static_cast<TokenId>(rng.below(11)));
  const auto ok = gradient_check(params, sample, 256);
  const auto bad = gradient_check(params, sample, 256, 7, 1e-4, std::string("block0.attn.qkv.w"));
  return {ok.checked >= 200 && ok.max_relative_error < 1e-3 && bad.max_relative_error > 1e-1,
          std::to_string(ok.checked) + " parameters, max relative error " +
              fmt(ok.max_relative_error, 3) + "; sign-flipped block0.attn.qkv.w gives " +
              fmt(bad.max_relative_error, 3)};
}

Outcome causal_invariance() {
  auto c = tiny_config();
  c.seq_len = 8;
  Rng rng(202);
  const auto params = Parameters::initialize(c, rng);
  std::vector<TokenId> tokens(8);
  for (auto& t : tokens) t = static_cast<TokenId>(rng.below(11));
  const auto base = forward(params, 24.0, tokens);
  double worst = 0.0;
  std::size_t variants = 0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    for (TokenId alt = 0; alt < 11; ++alt) {
      if (alt == tokens[j]) continue;
      auto changed = tokens;
      changed[j] = alt;
      const auto out = forward(params, 24.0, changed);
      ++variants;
      for (std::size_t r = 0; r <= j; ++r) {
        for (std::size_t v = 0; v < out.cols; ++v) {
          worst = std::max(worst, std::abs(out(r, v) - base(r, v)));
        }
      }
    }
  }
  return {worst <= 1e-5, std::to_string(variants) + " perturbations at T = 8, max change in rows 0..j " +
                             fmt(worst, 3)};
}

// Utterances of random letters whose length grows linearly from 2 words at
// 6 months to 8 words at 48 months.
std::vector<AgeBin> teacher_corpus(std::uint64_t seed, std::size_t per_bin) {
  Rng rng(seed);
  std::vector<AgeBin> bins;
  for (int age = 6; age <= 48; age += 3) {
    AgeBin bin{age, {}};
    const double mean = 2.0 + 6.0 * (age - 6) / 42.0;
    for (std::size_t i = 0; i < per_bin; ++i) {
      const double jitter = static_cast<double>(rng.between(-1, 1));
      const auto len = static_cast<std::size_t>(std::max(1.0, std::round(mean + jitter)));
      Utterance u{{}, static_cast<double>(age), "teacher"};
      for (std::size_t w = 0; w < len; ++w) u.words.push_back(std::string(1, static_cast<char>('a' + rng.below(9))));
      bin.utterances.push_back(std::move(u));
    }
    bins.push_back(std::move(bin));
  }
  return bins;
}

Outcome age_conditioning() {
  const std::clock_t c0 = std::clock();
  const auto train_bins = teacher_corpus(301, 300);
  const auto val_bins = teacher_corpus(302, 40);
  std::vector<Utterance> all;
  for (const auto& b : train_bins) all.insert(all.end(), b.utterances.begin(), b.utterances.end());
  const auto vocab = train_vocab(all, 11);
  if (vocab.size() != 11) return {false, "teacher vocabulary has " + std::to_string(vocab.size()) + " pieces"};

  auto c = tiny_config();
  c.seq_len = 64;
  c.learning_rate = 0.01;
  c.batch_size = 16;
  c.micro_batch = 16;
  c.max_epochs = 40;
  c.patience = 4;
  c.init_std = 0.1;
  const auto train_streams = encode_corpus_stream(train_bins, vocab);
  const auto val_streams = encode_corpus_stream(val_bins, vocab);
  const auto train_samples = make_samples(train_streams, c.seq_len);
  const auto val_samples = make_samples(val_streams, c.seq_len);
  Rng init_rng(303), train_rng(304);
  const auto result = train(Parameters::initialize(c, init_rng), train_samples, val_samples, train_rng);

  GenerationSpec spec;
  spec.ages = {6, 24, 48};
  spec.runs_per_age = 500;
  spec.top_k = 11;
  spec.max_tokens = 60;
  spec.rng_seed = 305;
  const auto corpora = generate_corpus(result.best, vocab, train_streams, spec);
  std::vector<double> mlu;
  for (const auto& g : corpora) mlu.push_back(mean_utterance_length(g.utterances));
  const double cpu_minutes = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC / 60.0;
  const bool increasing = mlu.size() == 3 && mlu[0] < mlu[1] && mlu[1] < mlu[2];
  const bool gap = mlu.size() == 3 && mlu[2] - mlu[0] >= 2.0;
  return {increasing && gap && cpu_minutes <= 30.0,
          "generated MLU " + fmt(mlu[0], 4) + " / " + fmt(mlu[1], 4) + " / " + fmt(mlu[2], 4) +
              " at 6 / 24 / 48 months (" + std::to_string(result.history.size()) + " epochs, " +
              fmt(cpu_minutes, 3) + " CPU-min)"};
}

Outcome novelty_oracle() {
  Rng rng(404);
  std::size_t mismatches = 0, queries = 0, hits = 0;
  for (int corpus_i = 0; corpus_i < 20; ++corpus_i) {
    const std::size_t n_utts = 1 + rng.below(1000);
    const std::size_t alphabet = 2 + rng.below(30);
    std::vector<std::vector<int>> ids(n_utts);
    std::vector<std::vector<std::string>> words(n_utts);
    for (std::size_t u = 0; u < n_utts; ++u) {
      const std::size_t len = 1 + rng.below(12);
      for (std::size_t k = 0; k < len; ++k) {
        ids[u].push_back(static_cast<int>(rng.below(alphabet)));
        words[u].push_back("w" + std::to_string(ids[u].back()));
      }
    }
    const NoveltyIndex index(words);
    for (int q = 0; q < 10000; ++q) {
      std::vector<int> query;
      if (rng.uniform() < 0.5) {
        const auto& src = ids[rng.below(n_utts)];
        const std::size_t start = rng.below(src.size());
        const std::size_t len = 1 + rng.below(src.size() - start);
        query.assign(src.begin() + static_cast<long>(start), src.begin() + static_cast<long>(start + len));
        if (rng.uniform() < 0.3) query.push_back(static_cast<int>(rng.below(alphabet + 2)));
      } else {
        const std::size_t len = 1 + rng.below(6);
        for (std::size_t k = 0; k < len; ++k) query.push_back(static_cast<int>(rng.below(alphabet + 2)));
      }
      std::vector<std::string> qw;
      for (int id : query) qw.push_back("w" + std::to_string(id));
      const bool expected = oracle::naive_contains(ids, query);
      const auto expected_count = oracle::naive_count(ids, query);
      hits += expected;
      ++queries;
      if (index.contains(qw) != expected || index.occurrences(qw) != expected_count) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(queries) + " queries over 20 corpora (" +
                               std::to_string(hits) + " present), " + std::to_string(mismatches) +
                               " mismatches"};
}

Outcome metric_identities() {
  std::vector<std::string> detail;
  bool ok = true;
  auto note = [&](bool cond, const std::string& what) {
    ok = ok && cond;
    detail.push_back(what + (cond ? " ok" : " FAILED"));
  };

  const std::vector<std::string> items = {"a", "b", "b", "c", "c", "c"};
  const auto p = FrequencyDistribution::from_items(items);
  note(std::abs(jsd(p, p)) <= 1e-12, "jsd(p,p)=" + fmt(jsd(p, p), 3));
  const std::vector<std::string> other = {"x", "y", "y"};
  const double disjoint = jsd(p, FrequencyDistribution::from_items(other));
  note(std::abs(disjoint - 1.0) <= 1e-12, "disjoint jsd=" + fmt(disjoint, 17));

  // A model whose output layer is zero scores every token with 1/V.
  auto c = tiny_config();
  Rng rng(505);
  auto params = Parameters::initialize(c, rng);
  const auto& head_w = params.layout().tensors[params.layout().head_w];
  const auto& head_b = params.layout().tensors[params.layout().head_b];
  std::fill_n(params.values().begin() + static_cast<long>(head_w.offset), head_w.size(), 0.0);
  std::fill_n(params.values().begin() + static_cast<long>(head_b.offset), head_b.size(), 0.0);
  std::vector<TokenId> tokens(40);
  for (auto& t : tokens) t = static_cast<TokenId>(rng.below(11));
  const double ppl = perplexity(token_logprobs(params, 30.0, tokens));
  note(std::abs(ppl - 11.0) <= 1e-12 * 11.0, "uniform perplexity=" + fmt(ppl, 17));

  std::vector<std::pair<double, double>> pts;
  for (int x = -5; x <= 5; ++x) pts.emplace_back(x, 2.0 * x * x + 1.0);
  const auto fit = quadratic_fit(pts);
  const double fit_err = std::max({std::abs(fit.a - 2.0), std::abs(fit.b), std::abs(fit.c - 1.0)});
  note(fit_err <= 1e-9, "quadratic fit error " + fmt(fit_err, 3));

  const std::vector<std::string> dogs = {"dog", "dog", "dog"};
  note(ttr(dogs) == 1.0 / 3.0, "ttr(dog dog dog)=" + fmt(ttr(dogs), 17));

  std::string joined;
  for (const auto& d : detail) joined += (joined.empty() ? "" : "; ") + d;
  return {ok, joined};
}

Outcome sampling_frequency() {
  Rng rng(606);
  const std::vector<double> probs = {0.5, 0.3, 0.2};
  std::size_t zero = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) zero += sample_from_posterior(probs, 2, rng) == 0;
  const double freq = static_cast<double>(zero) / static_cast<double>(n);
  return {freq >= 0.605 && freq <= 0.645, "frequency of token 0 = " + fmt(freq, 4)};
}

bool run_command(const std::string& cmd) { return std::system(cmd.c_str()) == 0; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs every stage of the toy pipeline into `out`, annotating between
// generation and ingestion.
bool run_toy_pipeline(const fs::path& out) {
  fs::remove_all(out);
  const std::string cli = std::string("\"") + CDSGEN_CLI + "\"";
  const std::string annotate = std::string("\"") + TOY_ANNOTATE + "\"";
  const std::string config = std::string("\"") + CDSGEN_SOURCE_DIR + "/data/toy/config.json\"";
  const std::string o = "\"" + out.string() + "\"";
  auto stage = [&](const std::string& name) {
    return run_command(cli + " " + name + " -q -c " + config + " -o " + o);
  };
  for (const char* s : {"prepare", "train-tokenizer", "train", "generate"}) {
    if (!stage(s)) return false;
  }
  const std::string ann = out.string() + "/annotations/";
  if (!run_command(annotate + " \"" + out.string() + "/corpus/normalized.txt\" real \"" + ann +
                   "real.conllu\" \"" + ann + "real.tsv\"")) {
    return false;
  }
  if (!run_command(annotate + " \"" + out.string() + "/generated/corpus.txt\" generated \"" + ann +
                   "generated.conllu\" \"" + ann + "generated.tsv\"")) {
    return false;
  }
  for (const char* s : {"ingest-parses", "analyze", "report"}) {
    if (!stage(s)) return false;
  }
  return true;
}

Outcome determinism() {
  const fs::path base = fs::path(CDSGEN_BINARY_DIR) / "acceptance_runs";
  const auto t0 = std::chrono::steady_clock::now();
  if (!run_toy_pipeline(base / "run1")) return {false, "first pipeline run failed"};
  if (!run_toy_pipeline(base / "run2")) return {false, "second pipeline run failed"};
  const auto a = read_file(base / "run1/analysis/measures.tsv");
  const auto b = read_file(base / "run2/analysis/measures.tsv");
  std::size_t rows = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  return {!a.empty() && a == b, std::to_string(rows) + " measure rows, " +
                                    (a == b ? "byte-identical" : "different") + " (" +
                                    fmt(seconds_since(t0), 3) + " s for two runs)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"tokenizer round trip", tokenizer_round_trip},
      {"gradient correctness", gradient_correctness},
      {"causal invariance", causal_invariance},
      {"age conditioning end-to-end", age_conditioning},
      {"novelty index oracle equivalence", novelty_oracle},
      {"metric identities", metric_identities},
      {"sampling correctness", sampling_frequency},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << std::endl;
  }
  std::cout << "SKIP preprocessing scale: conditional on the full transcript export\n"
            << "SKIP directional trends on real data: conditional on a full training run\n";
  return failures == 0 ? 0 : 1;
}
