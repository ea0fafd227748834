#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cdsgen/corpus.hpp"
#include "cdsgen/generator.hpp"
#include "cdsgen/metrics.hpp"
#include "cdsgen/model.hpp"
#include "cdsgen/treebank.hpp"

namespace cdsgen {

struct ParseSource {
  std::filesystem::path conllu;
  std::filesystem::path manifest;
};

enum class PerplexityScorer { Auto, Model, LogprobFile, None };

struct AnalysisSettings {
  int reference_age = 60;
  std::size_t perplexity_strings = 100;
  std::size_t perplexity_min_words = 50;
  PerplexityScorer scorer = PerplexityScorer::Auto;
  LexicalFilter lexical_filter = LexicalFilter::PerSample;
  RootDependents root_dependents = RootDependents::Direct;
  RootPolicy root_policy = RootPolicy::Strict;
};

struct PipelineConfig {
  // Relative input paths resolve against base_dir (the config file's directory).
  std::filesystem::path base_dir = ".";
  std::filesystem::path output_dir = "out";
  std::filesystem::path raw_input;
  LoadOptions load;
  NormalizeOptions normalize;
  std::size_t vocab_size = kDefaultVocabSize;
  ModelConfig model;
  GenerationSpec generation;
  BootstrapSettings bootstrap;
  AnalysisSettings analysis;
  std::vector<ParseSource> parses;
  std::optional<std::filesystem::path> logprobs;
  std::uint64_t seed = 0;

  // Throws ConfigError on unknown keys or invalid values.
  static PipelineConfig from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = ".");
  // Canonical form; output_dir and base_dir are left out so moving the output
  // does not change the hash.
  nlohmann::json to_json() const;
  std::string hash() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// "a.b.c=value"; the value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& j, std::string_view assignment);

// Reads the config file, applies overrides, then CDS_OUTPUT_DIR if set.
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});

struct ArtifactPaths {
  std::filesystem::path root;

  explicit ArtifactPaths(std::filesystem::path out) : root(std::move(out)) {}
  std::filesystem::path corpus_text() const { return root / "corpus" / "normalized.txt"; }
  std::filesystem::path corpus_index() const { return index_path_for(corpus_text()); }
  std::filesystem::path rejections() const { return root / "corpus" / "rejections.tsv"; }
  std::filesystem::path prepare_manifest() const { return root / "corpus" / "manifest.json"; }
  std::filesystem::path vocab() const { return root / "tokenizer" / "vocab.txt"; }
  std::filesystem::path train_streams() const { return root / "tokenizer" / "train_streams.txt"; }
  std::filesystem::path validation_streams() const {
    return root / "tokenizer" / "validation_streams.txt";
  }
  std::filesystem::path tokenizer_manifest() const { return root / "tokenizer" / "manifest.json"; }
  std::filesystem::path checkpoint() const { return root / "model" / "best.ckpt"; }
  std::filesystem::path history() const { return root / "model" / "history.tsv"; }
  std::filesystem::path train_manifest() const { return root / "model" / "manifest.json"; }
  std::filesystem::path generated_text() const { return root / "generated" / "corpus.txt"; }
  std::filesystem::path generated_index() const { return index_path_for(generated_text()); }
  std::filesystem::path generate_manifest() const { return root / "generated" / "manifest.json"; }
  std::filesystem::path parse_units() const { return root / "parses" / "units.tsv"; }
  std::filesystem::path parse_manifest() const { return root / "parses" / "manifest.json"; }
  std::filesystem::path measures() const { return root / "analysis" / "measures.tsv"; }
  std::filesystem::path fits() const { return root / "analysis" / "fits.tsv"; }
  std::filesystem::path novelty() const { return root / "analysis" / "novelty.tsv"; }
  std::filesystem::path perplexity_strings() const {
    return root / "analysis" / "perplexity_strings.jsonl";
  }
  std::filesystem::path analysis_manifest() const { return root / "analysis" / "manifest.json"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

enum class Stage { Prepare, TrainTokenizer, Train, Generate, IngestParses, Analyze, Report };

std::optional<Stage> parse_stage(std::string_view name);
std::string_view stage_name(Stage stage);

struct RunOptions {
  bool svg = false;
  std::ostream* log = nullptr;
};

// Throws MissingDependencyError when an upstream artifact is absent.
void run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options = {});

// 0 success, 2 schema/config, 3 missing dependency, 4 divergence, 1 otherwise.
int exit_code_for(const std::exception& e);

// Per-utterance annotation summary produced by ingest-parses.
struct ParsedUnit {
  std::string corpus_tag;
  int age_bin = 0;
  std::size_t utterance_index = 0;
  std::optional<int> root_dependents;
  std::vector<std::string> lemmas;  // lowercased, PUNCT excluded
  std::vector<std::string> upos;    // PUNCT excluded
};

void write_parsed_units(const std::filesystem::path& path, const std::vector<ParsedUnit>& units);
std::vector<ParsedUnit> read_parsed_units(const std::filesystem::path& path);

// Manifest written next to every stage's artifacts.
nlohmann::json make_manifest(std::string_view stage, const PipelineConfig& config,
                             const std::map<std::string, std::string>& inputs,
                             const std::map<std::string, std::string>& outputs);
// Checksum of `file`, which must match the one recorded under outputs.<key>
// in the manifest. Throws SchemaError otherwise.
std::string verify_recorded_output(const std::filesystem::path& manifest, const std::string& key,
                                   const std::filesystem::path& file);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Shortest round-trippable text for a double.
std::string format_number(double v);

}  // namespace cdsgen
