#include "cdsgen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"
#include "cdsgen/novelty.hpp"
#include "cdsgen/report.hpp"
#include "cdsgen/tokenizer.hpp"

namespace cdsgen {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaError(path.string() + ": not valid JSON");
  return j;
}

json make_manifest(std::string_view stage, const PipelineConfig& config,
                   const std::map<std::string, std::string>& inputs,
                   const std::map<std::string, std::string>& outputs) {
  return {{"format", "cdsgen-manifest"},
          {"version", 1},
          {"stage", stage},
          {"config_hash", config.hash()},
          {"master_seed", config.seed},
          {"inputs", inputs},
          {"outputs", outputs}};
}

std::optional<Stage> parse_stage(std::string_view name) {
  static const std::pair<std::string_view, Stage> kStages[] = {
      {"prepare", Stage::Prepare},           {"train-tokenizer", Stage::TrainTokenizer},
      {"train", Stage::Train},               {"generate", Stage::Generate},
      {"ingest-parses", Stage::IngestParses}, {"analyze", Stage::Analyze},
      {"report", Stage::Report}};
  for (const auto& [n, s] : kStages) {
    if (n == name) return s;
  }
  return std::nullopt;
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::Prepare: return "prepare";
    case Stage::TrainTokenizer: return "train-tokenizer";
    case Stage::Train: return "train";
    case Stage::Generate: return "generate";
    case Stage::IngestParses: return "ingest-parses";
    case Stage::Analyze: return "analyze";
    case Stage::Report: return "report";
  }
  return "?";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SchemaError*>(&e)) return 2;
  if (dynamic_cast<const MissingDependencyError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  return 1;
}

std::string verify_recorded_output(const fs::path& manifest_path, const std::string& key,
                            const fs::path& file) {
  const auto manifest = read_json(manifest_path);
  const auto& outputs = manifest.at("outputs");
  if (!outputs.contains(key)) throw SchemaError(manifest_path.string() + ": no output " + key);
  const auto recorded = outputs.at(key).get<std::string>();
  const auto actual = checksum_file(file);
  if (recorded != actual) {
    throw SchemaError(file.string() + " does not match the checksum recorded in " +
                      manifest_path.string() + "; rerun the producing stage");
  }
  return actual;
}

// ---------------------------------------------------------------------------
// parsed units

namespace {

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  return split(s, ' ');
}

std::string no_spaces(std::string s) {
  std::replace(s.begin(), s.end(), ' ', '_');
  return s;
}

}  // namespace

void write_parsed_units(const fs::path& path, const std::vector<ParsedUnit>& units) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "corpus_tag\tage_bin\tutterance_index\troot_dependents\tlemmas\tupos\n";
  for (const auto& u : units) {
    std::vector<std::string> lemmas;
    for (const auto& l : u.lemmas) lemmas.push_back(no_spaces(l));
    out << u.corpus_tag << '\t' << u.age_bin << '\t' << u.utterance_index << '\t'
        << (u.root_dependents ? std::to_string(*u.root_dependents) : "NA") << '\t'
        << join(lemmas, ' ') << '\t' << join(u.upos, ' ') << '\n';
  }
}

std::vector<ParsedUnit> read_parsed_units(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "corpus_tag\tage_bin\tutterance_index\troot_dependents\tlemmas\tupos") {
    throw SchemaError(path.string() + ": unexpected header");
  }
  std::vector<ParsedUnit> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto f = split(line, '\t');
    if (f.size() != 6) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    ParsedUnit u;
    try {
      u.corpus_tag = f[0];
      u.age_bin = std::stoi(f[1]);
      u.utterance_index = std::stoul(f[2]);
      if (f[3] != "NA") u.root_dependents = std::stoi(f[3]);
    } catch (const std::exception&) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    u.lemmas = split_words(f[4]);
    u.upos = split_words(f[5]);
    out.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stages

namespace {

constexpr std::string_view kRealTag = "real";
constexpr std::string_view kGeneratedTag = "generated";

std::ostream& log_of(const RunOptions& o) { return o.log ? *o.log : std::cerr; }

void require(const fs::path& path, std::string_view what, std::string_view producer) {
  if (!fs::exists(path)) {
    std::string msg = std::string(what) + " not found at " + path.string();
    if (!producer.empty()) msg += " (run `cdsgen " + std::string(producer) + "` first)";
    throw MissingDependencyError(msg);
  }
}

std::uint64_t stage_seed(const PipelineConfig& c, std::string_view purpose) {
  return derive_seed(c.seed, {stable_key(purpose)});
}

void run_prepare(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  const auto raw = c.resolve(c.raw_input);
  require(raw, "raw transcript export", "");
  auto loaded = load_records(raw, c.load);
  auto filtered = filter_and_normalize(loaded.records, c.normalize);
  auto binned = bin_by_age(filtered.utterances);
  write_normalized_corpus(a.corpus_text(), a.corpus_index(), binned.bins);
  {
    std::ofstream out(a.rejections(), std::ios::binary);
    out << "line\treason\n";
    for (const auto& r : loaded.rejected) out << r.line << '\t' << r.reason << '\n';
  }

  std::size_t utterances = 0, words = 0;
  json bins = json::array();
  for (const auto& b : binned.bins) {
    const auto w = word_count(b.utterances);
    bins.push_back({{"age", b.center_months}, {"utterances", b.utterances.size()}, {"words", w}});
    utterances += b.utterances.size();
    words += w;
  }
  const auto& fc = filtered.counts;
  auto m = make_manifest("prepare", c, {{"raw_input", checksum_file(raw)}},
                         {{"normalized", checksum_file(a.corpus_text())},
                          {"index", checksum_file(a.corpus_index())}});
  m["counts"] = {{"records", loaded.records.size()},
                 {"rejected_rows", loaded.rejected.size()},
                 {"wrong_role", fc.wrong_role},
                 {"missing_age", fc.missing_age},
                 {"marker", fc.marker},
                 {"empty_after_normalization", fc.empty_after_normalization},
                 {"outside_bins", binned.dropped},
                 {"utterances", utterances},
                 {"words", words}};
  m["bins"] = bins;
  write_json(a.prepare_manifest(), m);
  log_of(o) << "prepare: " << utterances << " utterances, " << words << " words in "
            << binned.bins.size() << " bins (" << loaded.rejected.size() << " rows rejected, "
            << fc.wrong_role + fc.missing_age + fc.marker + fc.empty_after_normalization
            << " filtered, " << binned.dropped << " outside bins)\n";
}

std::vector<AgeBin> load_prepared(const ArtifactPaths& a) {
  require(a.prepare_manifest(), "prepared corpus", "prepare");
  require(a.corpus_text(), "normalized corpus", "prepare");
  require(a.corpus_index(), "normalized corpus index", "prepare");
  verify_recorded_output(a.prepare_manifest(), "normalized", a.corpus_text());
  return read_normalized_corpus(a.corpus_text(), a.corpus_index());
}

std::size_t count_id(const std::vector<BinStream>& streams, TokenId id) {
  std::size_t n = 0;
  for (const auto& s : streams) n += static_cast<std::size_t>(std::count(s.ids.begin(), s.ids.end(), id));
  return n;
}

void run_train_tokenizer(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  auto bins = load_prepared(a);
  auto split = split_train_validation(std::move(bins));
  std::vector<Utterance> train_utts;
  for (const auto& b : split.train_bins) {
    train_utts.insert(train_utts.end(), b.utterances.begin(), b.utterances.end());
  }
  const auto vocab = train_vocab(train_utts, c.vocab_size);
  save_vocab(a.vocab(), vocab);
  const auto train_streams = encode_corpus_stream(split.train_bins, vocab);
  const auto val_streams = encode_corpus_stream({split.validation_bin}, vocab);
  save_streams(a.train_streams(), train_streams, vocab);
  save_streams(a.validation_streams(), val_streams, vocab);

  std::size_t train_tokens = 0, val_tokens = 0;
  for (const auto& s : train_streams) train_tokens += s.ids.size();
  for (const auto& s : val_streams) val_tokens += s.ids.size();
  auto m = make_manifest("train-tokenizer", c, {{"normalized", checksum_file(a.corpus_text())}},
                         {{"vocab", checksum_file(a.vocab())},
                          {"train_streams", checksum_file(a.train_streams())},
                          {"validation_streams", checksum_file(a.validation_streams())}});
  m["vocab_size"] = vocab.size();
  m["vocab_checksum"] = vocab.checksum();
  m["train_tokens"] = train_tokens;
  m["validation_tokens"] = val_tokens;
  m["unknown_tokens"] = count_id(train_streams, vocab.unk_id()) + count_id(val_streams, vocab.unk_id());
  write_json(a.tokenizer_manifest(), m);
  log_of(o) << "train-tokenizer: " << vocab.size() << " pieces, " << train_tokens
            << " training tokens, " << val_tokens << " validation tokens\n";
}

ModelConfig effective_model_config(const PipelineConfig& c, const WordPieceVocab& vocab) {
  ModelConfig mc = c.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

void run_train(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  require(a.tokenizer_manifest(), "tokenizer manifest", "train-tokenizer");
  require(a.vocab(), "vocabulary", "train-tokenizer");
  require(a.train_streams(), "training token streams", "train-tokenizer");
  require(a.validation_streams(), "validation token streams", "train-tokenizer");
  const auto vocab = load_vocab(a.vocab());
  const auto train_streams = load_streams(a.train_streams(), vocab);
  const auto val_streams = load_streams(a.validation_streams(), vocab);
  const auto mc = effective_model_config(c, vocab);
  const auto train_samples = make_samples(train_streams, mc.seq_len);
  const auto val_samples = make_samples(val_streams, mc.seq_len);
  if (train_samples.empty() || val_samples.empty()) {
    throw ConfigError("corpus too small for seq_len " + std::to_string(mc.seq_len) + ": " +
                      std::to_string(train_samples.size()) + " training and " +
                      std::to_string(val_samples.size()) + " validation samples");
  }
  log_of(o) << "train: " << train_samples.size() << " training samples, " << val_samples.size()
            << " validation samples\n";

  Rng init_rng(stage_seed(c, "init"));
  auto params = Parameters::initialize(mc, init_rng);
  Rng rng(stage_seed(c, "train"));
  fs::create_directories(a.history().parent_path());
  std::ofstream history(a.history(), std::ios::binary);
  history << "epoch\ttrain_loss\tvalidation_loss\n";
  auto result = train(std::move(params), train_samples, val_samples, rng, [&](const EpochRecord& r) {
    history << r.epoch << '\t' << format_number(r.train_loss) << '\t'
            << format_number(r.validation_loss) << '\n';
    history.flush();
    log_of(o) << "  epoch " << r.epoch << ": train " << format_number(r.train_loss)
              << ", validation " << format_number(r.validation_loss) << '\n';
  });
  history.close();
  save_checkpoint(a.checkpoint(), result.best,
                  {vocab.checksum(), c.seed, result.best_epoch, result.best_validation_loss});

  auto m = make_manifest("train", c,
                         {{"vocab", checksum_file(a.vocab())},
                          {"train_streams", checksum_file(a.train_streams())},
                          {"validation_streams", checksum_file(a.validation_streams())}},
                         {{"checkpoint", checksum_file(a.checkpoint())},
                          {"history", checksum_file(a.history())}});
  m["model"] = mc;
  m["train_samples"] = train_samples.size();
  m["validation_samples"] = val_samples.size();
  m["epochs"] = result.history.size();
  m["best_epoch"] = result.best_epoch;
  m["best_validation_loss"] = result.best_validation_loss;
  m["stopped_early"] = result.stopped_early;
  write_json(a.train_manifest(), m);
  log_of(o) << "train: best validation loss " << format_number(result.best_validation_loss)
            << " at epoch " << result.best_epoch << '\n';
}

Checkpoint load_model(const PipelineConfig& c, const ArtifactPaths& a, const WordPieceVocab& vocab) {
  require(a.checkpoint(), "model checkpoint", "train");
  auto ck = load_checkpoint(a.checkpoint(), effective_model_config(c, vocab));
  if (ck.meta.vocab_checksum != vocab.checksum()) {
    throw SchemaError(a.checkpoint().string() + " was trained with a different vocabulary");
  }
  return ck;
}

void run_generate(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  require(a.vocab(), "vocabulary", "train-tokenizer");
  require(a.train_streams(), "training token streams", "train-tokenizer");
  require(a.train_manifest(), "training manifest", "train");
  const auto vocab = load_vocab(a.vocab());
  const auto ck = load_model(c, a, vocab);
  const auto streams = load_streams(a.train_streams(), vocab);

  GenerationSpec spec = c.generation;
  spec.rng_seed = derive_seed(c.seed, {stable_key("generate"), c.generation.rng_seed});
  std::set<long> seen;
  for (double age : spec.ages) {
    if (!seen.insert(std::lround(age)).second) {
      throw ConfigError("generation ages must be distinct whole months");
    }
  }
  const auto corpora = generate_corpus(ck.params, vocab, streams, spec);

  std::vector<AgeBin> bins;
  json ages = json::array();
  for (const auto& g : corpora) {
    AgeBin b{static_cast<int>(std::lround(g.age_months)), g.utterances};
    for (auto& u : b.utterances) u.corpus_id = std::string(kGeneratedTag);
    ages.push_back({{"age", b.center_months},
                    {"runs", g.runs},
                    {"empty_runs", g.empty_runs},
                    {"utterances", g.utterances.size()},
                    {"words", g.words()}});
    log_of(o) << "generate: age " << b.center_months << ": " << g.utterances.size()
              << " utterances, " << g.words() << " words (" << g.empty_runs << " of " << g.runs
              << " runs empty)\n";
    bins.push_back(std::move(b));
  }
  write_normalized_corpus(a.generated_text(), a.generated_index(), bins);
  auto m = make_manifest("generate", c,
                         {{"checkpoint", checksum_file(a.checkpoint())},
                          {"vocab", checksum_file(a.vocab())},
                          {"train_streams", checksum_file(a.train_streams())}},
                         {{"corpus", checksum_file(a.generated_text())},
                          {"index", checksum_file(a.generated_index())}});
  m["ages"] = ages;
  write_json(a.generate_manifest(), m);
}

void run_ingest_parses(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  if (c.parses.empty()) throw ConfigError("no parse sources configured (config key 'parses')");
  std::vector<ParsedUnit> units;
  std::map<std::string, std::string> inputs;
  json sources = json::array();
  for (std::size_t i = 0; i < c.parses.size(); ++i) {
    const auto conllu = c.resolve(c.parses[i].conllu);
    const auto manifest = c.resolve(c.parses[i].manifest);
    require(conllu, "CoNLL-U file", "");
    require(manifest, "sentence manifest", "");
    auto parsed = parse_conllu_file(conllu, c.analysis.root_policy);
    const auto rows = read_sentence_manifest(manifest);
    attach_sources(parsed.sentences, rows, parsed.report.blocks);
    for (const auto& s : parsed.sentences) {
      ParsedUnit u;
      u.corpus_tag = s.source.corpus_tag;
      u.age_bin = s.source.age_bin;
      u.utterance_index = s.source.utterance_index;
      u.root_dependents = root_dependency_count(s, c.analysis.root_dependents);
      u.lemmas = lemma_stream({s});
      for (const auto& t : s.tokens) {
        if (t.upos != "PUNCT") u.upos.push_back(t.upos);
      }
      units.push_back(std::move(u));
    }
    const std::string key = "parses[" + std::to_string(i) + "]";
    inputs[key + ".conllu"] = checksum_file(conllu);
    inputs[key + ".manifest"] = checksum_file(manifest);
    const auto& r = parsed.report;
    json problems = json::array();
    for (std::size_t k = 0; k < r.problems.size() && k < 50; ++k) {
      problems.push_back({{"line", r.problems[k].line}, {"reason", r.problems[k].reason}});
    }
    sources.push_back({{"blocks", r.blocks},
                       {"sentences", parsed.sentences.size()},
                       {"rejected_blocks", r.rejected_blocks},
                       {"repaired_blocks", r.repaired_blocks},
                       {"lines", r.lines},
                       {"token_lines", r.token_lines},
                       {"comment_lines", r.comment_lines},
                       {"range_lines", r.range_lines},
                       {"blank_lines", r.blank_lines},
                       {"rejected_lines", r.rejected_lines},
                       {"problems", problems}});
    log_of(o) << "ingest-parses: " << c.parses[i].conllu.generic_string() << ": "
              << parsed.sentences.size() << " sentences, " << r.rejected_blocks
              << " blocks rejected, " << r.repaired_blocks << " repaired\n";
  }
  std::sort(units.begin(), units.end(), [](const ParsedUnit& x, const ParsedUnit& y) {
    return std::tie(x.corpus_tag, x.age_bin, x.utterance_index) <
           std::tie(y.corpus_tag, y.age_bin, y.utterance_index);
  });
  for (std::size_t i = 1; i < units.size(); ++i) {
    const auto& p = units[i - 1];
    const auto& u = units[i];
    if (p.corpus_tag == u.corpus_tag && p.age_bin == u.age_bin &&
        p.utterance_index == u.utterance_index) {
      throw SchemaError("two parses for " + u.corpus_tag + " age " + std::to_string(u.age_bin) +
                        " utterance " + std::to_string(u.utterance_index));
    }
  }
  write_parsed_units(a.parse_units(), units);
  auto m = make_manifest("ingest-parses", c, inputs, {{"units", checksum_file(a.parse_units())}});
  m["sources"] = sources;
  write_json(a.parse_manifest(), m);
}

// ---------------------------------------------------------------------------
// analysis

const auto& kMeasureOrder = kMeasureNames;

struct Group {
  std::string tag;
  int age = 0;
  std::vector<Utterance> utterances;
  std::vector<std::size_t> words;
  std::vector<const ParsedUnit*> parses;  // per utterance, null when unparsed
  const std::vector<std::vector<std::string>>* lemma_source = nullptr;
  std::vector<std::vector<std::string>> lemmas;
};

void fill_group(Group& g, const std::map<std::tuple<std::string, int, std::size_t>, const ParsedUnit*>& by_key,
                bool use_lemmas) {
  g.words.clear();
  g.parses.assign(g.utterances.size(), nullptr);
  g.lemmas.resize(g.utterances.size());
  for (std::size_t i = 0; i < g.utterances.size(); ++i) {
    g.words.push_back(g.utterances[i].words.size());
    auto it = by_key.find({g.tag, g.age, i});
    if (it != by_key.end()) g.parses[i] = it->second;
    if (use_lemmas) {
      if (g.parses[i]) g.lemmas[i] = g.parses[i]->lemmas;
    } else {
      g.lemmas[i] = g.utterances[i].words;
    }
  }
}

std::vector<std::string> gather_lemmas(const Group& g, std::span<const std::size_t> units) {
  std::vector<std::string> out;
  for (auto u : units) out.insert(out.end(), g.lemmas[u].begin(), g.lemmas[u].end());
  return out;
}

struct Scorer {
  enum Kind { None, Model, File } kind = None;
  std::optional<Parameters> params;
  std::optional<WordPieceVocab> vocab;
  std::map<std::string, std::vector<double>> file;
};

std::map<std::string, std::vector<double>> read_logprob_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::vector<double>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("text") || !j.contains("logprobs")) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) +
                        ": expected an object with text, tokens and logprobs");
    }
    auto lp = j.at("logprobs").get<std::vector<double>>();
    if (j.contains("tokens") && j.at("tokens").size() != lp.size()) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) +
                        ": tokens and logprobs differ in length");
    }
    out[j.at("text").get<std::string>()] = std::move(lp);
  }
  return out;
}

void write_measures(const fs::path& path, const std::vector<MeasureDistribution>& dists) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "corpus_tag\tage\tmeasure\tsubsample_id\tvalue\n";
  for (const auto& d : dists) {
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      out << d.corpus_tag << '\t' << d.age << '\t' << d.measure << '\t' << i << '\t'
          << (d.values[i] ? format_number(*d.values[i]) : "NA") << '\n';
    }
  }
}

void run_analyze(const PipelineConfig& c, const ArtifactPaths& a, const RunOptions& o) {
  const auto real_bins = load_prepared(a);
  std::map<std::string, std::string> inputs = {{"normalized", checksum_file(a.corpus_text())}};
  json corpora = {{"real", inputs["normalized"]}, {"generated", nullptr}};
  std::vector<std::string> notes;

  std::vector<AgeBin> generated_bins;
  const bool have_generated = fs::exists(a.generate_manifest());
  if (have_generated) {
    require(a.generated_text(), "generated corpus", "generate");
    require(a.generated_index(), "generated corpus index", "generate");
    corpora["generated"] = verify_recorded_output(a.generate_manifest(), "corpus", a.generated_text());
    inputs["generated"] = corpora["generated"];
    generated_bins = read_normalized_corpus(a.generated_text(), a.generated_index());
  } else {
    notes.push_back("no generated corpus: real-corpus analysis only");
  }

  std::vector<ParsedUnit> units;
  if (fs::exists(a.parse_manifest())) {
    inputs["units"] = verify_recorded_output(a.parse_manifest(), "units", a.parse_units());
    units = read_parsed_units(a.parse_units());
  } else {
    notes.push_back("no parses ingested: TTR uses word forms; root dependencies and POS rates are missing");
  }
  std::map<std::tuple<std::string, int, std::size_t>, const ParsedUnit*> by_key;
  std::set<std::string> parsed_tags;
  for (const auto& u : units) {
    by_key[{u.corpus_tag, u.age_bin, u.utterance_index}] = &u;
    parsed_tags.insert(u.corpus_tag);
  }

  std::vector<Group> groups;
  json lemma_sources = json::object();
  auto add_groups = [&](std::string_view tag, const std::vector<AgeBin>& bins) {
    const bool use_lemmas = parsed_tags.count(std::string(tag)) > 0;
    lemma_sources[std::string(tag)] = use_lemmas ? "lemmas" : "word forms";
    if (!units.empty() && !use_lemmas) {
      notes.push_back("no parses for " + std::string(tag) + ": TTR uses word forms");
    }
    for (const auto& b : bins) {
      Group g;
      g.tag = tag;
      g.age = b.center_months;
      g.utterances = b.utterances;
      fill_group(g, by_key, use_lemmas);
      groups.push_back(std::move(g));
    }
  };
  add_groups(kRealTag, real_bins);
  add_groups(kGeneratedTag, generated_bins);

  const Group* reference = nullptr;
  for (const auto& g : groups) {
    if (g.tag == kRealTag && g.age == c.analysis.reference_age) reference = &g;
  }
  if (!reference) {
    notes.push_back("no real bin at " + std::to_string(c.analysis.reference_age) +
                    " months: lexical divergence is missing");
  }

  Scorer scorer;
  auto scorer_kind = c.analysis.scorer;
  if (scorer_kind == PerplexityScorer::Auto) {
    if (c.logprobs) scorer_kind = PerplexityScorer::LogprobFile;
    else if (fs::exists(a.checkpoint())) scorer_kind = PerplexityScorer::Model;
    else scorer_kind = PerplexityScorer::None;
  }
  if (scorer_kind == PerplexityScorer::Model) {
    require(a.vocab(), "vocabulary", "train-tokenizer");
    scorer.vocab = load_vocab(a.vocab());
    scorer.params = load_model(c, a, *scorer.vocab).params;
    scorer.kind = Scorer::Model;
    inputs["checkpoint"] = checksum_file(a.checkpoint());
    inputs["vocab"] = checksum_file(a.vocab());
  } else if (scorer_kind == PerplexityScorer::LogprobFile) {
    if (!c.logprobs) throw ConfigError("scorer 'logprobs' needs the 'logprobs' path");
    const auto path = c.resolve(*c.logprobs);
    require(path, "log-probability file", "");
    scorer.file = read_logprob_file(path);
    scorer.kind = Scorer::File;
    inputs["logprobs"] = checksum_file(path);
  } else {
    notes.push_back("no perplexity scorer: perplexity is missing");
  }

  BootstrapSettings bs = c.bootstrap;
  bs.seed = stage_seed(c, "bootstrap");
  std::vector<MeasureDistribution> dists;
  std::ofstream strings_out;
  fs::create_directories(a.perplexity_strings().parent_path());
  strings_out.open(a.perplexity_strings(), std::ios::binary);

  for (const auto& g : groups) {
    const auto& W = g.words;
    std::vector<std::size_t> utterance_ones(W.size(), 1);
    auto ttr_fn = [&](std::span<const std::size_t> u, Rng&) {
      const auto lemmas = gather_lemmas(g, u);
      return ttr(lemmas);
    };
    auto mlu_fn = [&](std::span<const std::size_t> u, Rng&) {
      std::size_t total = 0;
      for (auto i : u) total += W[i];
      return static_cast<double>(total) / static_cast<double>(u.size());
    };
    auto root_fn = [&](std::span<const std::size_t> u, Rng&) {
      std::vector<std::size_t> counts;
      for (auto i : u) {
        if (g.parses[i] && g.parses[i]->root_dependents) {
          counts.push_back(static_cast<std::size_t>(*g.parses[i]->root_dependents));
        }
      }
      return mean_of_counts(counts);
    };
    auto lex_fn = [&](std::span<const std::size_t> u, Rng& rng) {
      if (!reference) throw UndefinedMeasureError("no reference bin");
      const auto sample = gather_lemmas(g, u);
      const auto ref_units = draw_subsample(reference->words, SampleUnit::Words, bs, rng);
      const auto ref = gather_lemmas(*reference, ref_units);
      return lexical_divergence(sample, ref, c.analysis.lexical_filter);
    };

    dists.push_back(bootstrap("ttr", g.tag, g.age, W, SampleUnit::Words, bs, ttr_fn));
    dists.push_back(bootstrap("mlu", g.tag, g.age, W, SampleUnit::Utterances, bs, mlu_fn));
    dists.push_back(
        bootstrap("root_dependencies", g.tag, g.age, W, SampleUnit::Utterances, bs, root_fn));

    // Perplexity: one value per contiguous string of complete utterances.
    MeasureDistribution ppl{"perplexity", g.tag, g.age, {}};
    {
      Rng rng(derive_seed(bs.seed, {stable_key("perplexity"), stable_key(g.tag),
                                    static_cast<std::uint64_t>(g.age)}));
      const auto ranges = sample_contiguous_strings(W, c.analysis.perplexity_strings,
                                                    c.analysis.perplexity_min_words, rng);
      std::vector<std::string> texts(ranges.size());
      for (std::size_t s = 0; s < ranges.size(); ++s) {
        std::vector<std::string> parts;
        for (std::size_t i = ranges[s].first; i < ranges[s].second; ++i) {
          parts.push_back(serialize(g.utterances[i]));
        }
        texts[s] = join(parts, ' ');
        strings_out << json{{"corpus_tag", g.tag}, {"age", g.age}, {"id", s}, {"text", texts[s]}}.dump()
                    << '\n';
      }
      ppl.values.assign(c.analysis.perplexity_strings, std::nullopt);
      if (scorer.kind == Scorer::Model) {
        const auto n = static_cast<std::int64_t>(ranges.size());
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t s = 0; s < n; ++s) {
          TokenSequence tokens;
          for (std::size_t i = ranges[s].first; i < ranges[s].second; ++i) {
            auto t = encode(g.utterances[i], *scorer.vocab);
            tokens.insert(tokens.end(), t.begin(), t.end());
          }
          try {
            ppl.values[s] = perplexity(token_logprobs(*scorer.params, g.age, tokens));
          } catch (const Error&) {
            ppl.values[s] = std::nullopt;
          }
        }
      } else if (scorer.kind == Scorer::File) {
        for (std::size_t s = 0; s < ranges.size(); ++s) {
          auto it = scorer.file.find(texts[s]);
          if (it != scorer.file.end() && !it->second.empty()) ppl.values[s] = perplexity(it->second);
        }
      }
      if (ranges.empty()) {
        notes.push_back(g.tag + " age " + std::to_string(g.age) + ": no string of " +
                        std::to_string(c.analysis.perplexity_min_words) +
                        " words for perplexity");
      }
    }
    dists.push_back(std::move(ppl));
    dists.push_back(
        bootstrap("lexical_divergence", g.tag, g.age, W, SampleUnit::Words, bs, lex_fn));

    for (const auto& cat : kReportedPosCategories) {
      auto pos_fn = [&](std::span<const std::size_t> u, Rng&) {
        std::size_t total = 0, hits = 0;
        for (auto i : u) {
          if (!g.parses[i]) continue;
          total += g.parses[i]->upos.size();
          hits += static_cast<std::size_t>(
              std::count(g.parses[i]->upos.begin(), g.parses[i]->upos.end(), cat));
        }
        if (total == 0) throw UndefinedMeasureError("no parsed tokens");
        return static_cast<double>(hits) / static_cast<double>(total);
      };
      // Shared key so all rates come from the same subsamples.
      auto d = bootstrap("pos", g.tag, g.age, W, SampleUnit::Words, bs, pos_fn);
      std::string name = "pos_" + cat;
      std::transform(name.begin(), name.end(), name.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      d.measure = name;
      dists.push_back(std::move(d));
    }
    log_of(o) << "analyze: " << g.tag << " age " << g.age << " (" << g.utterances.size()
              << " utterances)\n";
  }
  strings_out.close();

  // Order rows by tag, measure, age.
  auto tag_rank = [](const std::string& t) { return t == kRealTag ? 0 : 1; };
  auto measure_rank = [](const std::string& m) {
    return std::find(kMeasureOrder.begin(), kMeasureOrder.end(), m) - kMeasureOrder.begin();
  };
  std::stable_sort(dists.begin(), dists.end(), [&](const auto& x, const auto& y) {
    return std::make_tuple(tag_rank(x.corpus_tag), measure_rank(x.measure), x.age) <
           std::make_tuple(tag_rank(y.corpus_tag), measure_rank(y.measure), y.age);
  });
  write_measures(a.measures(), dists);

  // Quadratic trends over all present subsample values.
  {
    std::ofstream out(a.fits(), std::ios::binary);
    out << "corpus_tag\tmeasure\ta\tb\tc\trss\n";
    for (const auto tag : {kRealTag, kGeneratedTag}) {
      for (const auto& m : kMeasureOrder) {
        std::vector<std::pair<double, double>> points;
        for (const auto& d : dists) {
          if (d.corpus_tag != tag || d.measure != m) continue;
          for (double v : d.present()) points.push_back({static_cast<double>(d.age), v});
        }
        if (points.empty()) continue;
        try {
          const auto f = quadratic_fit(points);
          out << tag << '\t' << m << '\t' << format_number(f.a) << '\t' << format_number(f.b) << '\t'
              << format_number(f.c) << '\t' << format_number(f.rss) << '\n';
        } catch (const RankError&) {
          notes.push_back("no fit for " + std::string(tag) + " " + m + ": fewer than 3 ages");
        }
      }
    }
  }

  // Novelty against the training split.
  {
    std::vector<std::vector<std::string>> training;
    std::vector<std::vector<std::vector<std::string>>> real_groups, generated_groups;
    for (const auto& b : real_bins) {
      if (b.center_months == kValidationBinCenter) continue;
      real_groups.emplace_back();
      for (const auto& u : b.utterances) {
        training.push_back(u.words);
        real_groups.back().push_back(u.words);
      }
    }
    for (const auto& b : generated_bins) {
      generated_groups.emplace_back();
      for (const auto& u : b.utterances) generated_groups.back().push_back(u.words);
    }
    const NoveltyIndex index(training);
    std::ofstream out(a.novelty(), std::ios::binary);
    out << "corpus_tag\tlength\tproportion\tsd\tn\n";
    auto emit = [&](std::string_view tag, const NoveltyProfile& profile) {
      for (const auto& b : profile) {
        out << tag << '\t' << b.length << '\t' << format_number(b.proportion) << '\t'
            << format_number(b.sd) << '\t' << b.n << '\n';
      }
    };
    emit(kRealTag, novelty_profile(real_groups, index, NoveltyMode::LeaveOneOut));
    if (have_generated) {
      emit(kGeneratedTag, novelty_profile(generated_groups, index, NoveltyMode::External));
    }
  }

  json group_list = json::array();
  for (const auto& g : groups) {
    std::size_t words = 0, parsed = 0;
    for (auto w : g.words) words += w;
    for (auto p : g.parses) parsed += p != nullptr;
    group_list.push_back({{"corpus_tag", g.tag},
                          {"age", g.age},
                          {"utterances", g.utterances.size()},
                          {"words", words},
                          {"parsed", parsed}});
  }
  auto m = make_manifest("analyze", c, inputs,
                         {{"measures", checksum_file(a.measures())},
                          {"fits", checksum_file(a.fits())},
                          {"novelty", checksum_file(a.novelty())},
                          {"perplexity_strings", checksum_file(a.perplexity_strings())}});
  m["corpora"] = corpora;
  m["lemma_source"] = lemma_sources;
  m["scorer"] = scorer.kind == Scorer::Model  ? "model"
                : scorer.kind == Scorer::File ? "logprobs"
                                              : "none";
  m["groups"] = group_list;
  m["notes"] = notes;
  write_json(a.analysis_manifest(), m);
  for (const auto& n : notes) log_of(o) << "analyze: note: " << n << '\n';
}

}  // namespace

void run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options) {
  const ArtifactPaths a(config.output_dir);
  const std::map<Stage, fs::path> stage_dirs = {
      {Stage::Prepare, a.corpus_text().parent_path()},
      {Stage::TrainTokenizer, a.vocab().parent_path()},
      {Stage::Train, a.checkpoint().parent_path()},
      {Stage::Generate, a.generated_text().parent_path()},
      {Stage::IngestParses, a.parse_units().parent_path()},
      {Stage::Analyze, a.measures().parent_path()},
      {Stage::Report, a.report_dir()}};
  fs::create_directories(stage_dirs.at(stage));
  switch (stage) {
    case Stage::Prepare: run_prepare(config, a, options); break;
    case Stage::TrainTokenizer: run_train_tokenizer(config, a, options); break;
    case Stage::Train: run_train(config, a, options); break;
    case Stage::Generate: run_generate(config, a, options); break;
    case Stage::IngestParses: run_ingest_parses(config, a, options); break;
    case Stage::Analyze: run_analyze(config, a, options); break;
    case Stage::Report: {
      const auto written = write_report(a, config, options.svg);
      for (const auto& p : written) log_of(options) << "report: wrote " << p.generic_string() << '\n';
      break;
    }
  }
}

}  // namespace cdsgen
