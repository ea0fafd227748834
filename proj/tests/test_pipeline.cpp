#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/pipeline.hpp"
#include "cdsgen/report.hpp"
#include "cdsgen/rng.hpp"

using namespace cdsgen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("cdsgen_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json minimal_config() {
  return json::parse(R"({
    "seed": 3,
    "input": {"path": "raw.tsv"},
    "tokenizer": {"vocab_size": 40},
    "model": {"d_model": 8, "n_blocks": 1, "n_heads": 2, "ffn_dim": 16, "seq_len": 8},
    "generation": {"ages": [6, 12], "runs_per_age": 2, "top_k": 5, "max_tokens": 10},
    "bootstrap": {"n_subsamples": 4, "word_budget": 20, "utterance_count": 5},
    "analysis": {"perplexity_strings": 3, "perplexity_min_words": 5}
  })");
}

void write_raw(const fs::path& path) {
  std::ofstream out(path);
  out << "transcript_id\tcorpus_name\tspeaker_role\ttarget_child_age\tgloss\n";
  const char* words[] = {"ball", "dog", "look", "the", "red", "you", "want", "oh", "cup", "big"};
  Rng rng(11);
  for (int age : {6, 12, 57, 60}) {
    for (int i = 0; i < 30; ++i) {
      std::string gloss;
      const int n = 1 + static_cast<int>(rng.below(5));
      for (int k = 0; k < n; ++k) gloss += std::string(k ? " " : "") + words[rng.below(10)];
      out << "t" << age << "\tToy\tMOT\t" << age << "\t" << gloss << ".\n";
    }
  }
}

}  // namespace

TEST_CASE("configuration parses, hashes and rejects unknown keys") {
  auto j = minimal_config();
  const auto c = PipelineConfig::from_json(j);
  CHECK(c.model.d_model == 8);
  CHECK(c.bootstrap.word_budget == 20);
  CHECK(c.analysis.scorer == PerplexityScorer::Auto);
  CHECK(c.hash() == PipelineConfig::from_json(j).hash());

  auto moved = c;
  moved.output_dir = "elsewhere";
  CHECK(moved.hash() == c.hash());

  auto changed = j;
  changed["bootstrap"]["word_budget"] = 21;
  CHECK(PipelineConfig::from_json(changed).hash() != c.hash());

  auto unknown = j;
  unknown["model"]["d_modle"] = 8;
  CHECK_THROWS_AS(PipelineConfig::from_json(unknown), ConfigError);
  auto bad_enum = j;
  bad_enum["analysis"]["scorer"] = "oracle";
  CHECK_THROWS_AS(PipelineConfig::from_json(bad_enum), ConfigError);
  auto no_input = j;
  no_input.erase("input");
  CHECK_THROWS_AS(PipelineConfig::from_json(no_input), ConfigError);
  auto wrong_type = j;
  wrong_type["bootstrap"]["n_subsamples"] = "many";
  CHECK_THROWS_AS(PipelineConfig::from_json(wrong_type), ConfigError);
}

TEST_CASE("config round trips through its canonical form") {
  const auto c = PipelineConfig::from_json(minimal_config());
  const auto again = PipelineConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  CHECK(again.hash() == c.hash());
}

TEST_CASE("overrides set nested values with JSON or string payloads") {
  auto j = minimal_config();
  apply_override(j, "model.d_model=16");
  apply_override(j, "analysis.scorer=none");
  apply_override(j, "generation.ages=[3,6]");
  CHECK(j["model"]["d_model"] == 16);
  CHECK(j["analysis"]["scorer"] == "none");
  CHECK(j["generation"]["ages"] == json::array({3, 6}));
  CHECK_THROWS_AS(apply_override(j, "model.d_model"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "seed.inner=3"), ConfigError);
}

TEST_CASE("paths resolve against the config directory and the output prefix") {
  auto c = PipelineConfig::from_json(minimal_config(), "cfgdir");
  c.output_dir = "outdir";
  CHECK(c.resolve("raw.tsv") == fs::path("cfgdir") / "raw.tsv");
  CHECK(c.resolve("$OUT/annotations/a.conllu") == fs::path("outdir") / "annotations/a.conllu");
  CHECK(c.resolve("/abs/file") == fs::path("/abs/file"));
}

TEST_CASE("load_config reports a missing file as a missing dependency") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), MissingDependencyError);
}

TEST_CASE("format_number round trips and marks missing values") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.between(-8, 8)));
    CHECK(std::strtod(format_number(v).c_str(), nullptr) == v);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(3.0) == "3");
  CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "NA");
}

TEST_CASE("exit codes follow the error category") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(SchemaError("x")) == 2);
  CHECK(exit_code_for(MissingDependencyError("x")) == 3);
  CHECK(exit_code_for(DivergenceError("x")) == 4);
  CHECK(exit_code_for(IoError("x")) == 1);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("stage names map both ways") {
  for (auto s : {Stage::Prepare, Stage::TrainTokenizer, Stage::Train, Stage::Generate,
                 Stage::IngestParses, Stage::Analyze, Stage::Report}) {
    CHECK(parse_stage(stage_name(s)) == s);
  }
  CHECK_FALSE(parse_stage("deploy").has_value());
}

TEST_CASE("parsed units round trip") {
  TempDir dir("units");
  std::vector<ParsedUnit> units = {
      {"real", 6, 0, 2, {"dog", "run"}, {"NOUN", "VERB"}},
      {"real", 6, 1, std::nullopt, {"oh"}, {"INTJ"}},
      {"generated", 12, 4, 0, {}, {}},
  };
  write_parsed_units(dir.path / "units.tsv", units);
  const auto back = read_parsed_units(dir.path / "units.tsv");
  REQUIRE(back.size() == units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    CHECK(back[i].corpus_tag == units[i].corpus_tag);
    CHECK(back[i].age_bin == units[i].age_bin);
    CHECK(back[i].utterance_index == units[i].utterance_index);
    CHECK(back[i].root_dependents == units[i].root_dependents);
    CHECK(back[i].lemmas == units[i].lemmas);
    CHECK(back[i].upos == units[i].upos);
  }
}

TEST_CASE("report summaries: constant series have zero spread, absent series are null") {
  std::vector<MeasureRow> rows;
  for (std::size_t i = 0; i < 5; ++i) rows.push_back({"real", 6, "ttr", i, 0.4});
  rows.push_back({"real", 6, "mlu", 0, std::nullopt});
  rows.push_back({"real", 6, "mlu", 1, 2.0});
  const auto report = build_report(rows, {}, {}, {"real", "generated"}, {});
  const auto& ttr = report["measures"][0];
  REQUIRE(ttr["measure"] == "ttr");
  const auto& s = ttr["ages"][0]["real"];
  CHECK(s["n"] == 5);
  CHECK(s["sd"].get<double>() == 0.0);
  CHECK(s["median"].get<double>() == doctest::Approx(0.4));
  CHECK(ttr["ages"][0]["generated"].is_null());
  const auto& mlu = report["measures"][1];
  CHECK(mlu["ages"][0]["real"]["missing"] == 1);
  CHECK(mlu["ages"][0]["real"]["n"] == 1);
  const auto notes = report["notes"].get<std::vector<std::string>>();
  CHECK(std::find(notes.begin(), notes.end(), "no generated values for ttr") != notes.end());
  CHECK(std::find(notes.begin(), notes.end(), "no real values for perplexity") != notes.end());
}

TEST_CASE("real-only run: analyze without a model, report, refuse mismatched corpora") {
  TempDir dir("pipeline");
  write_raw(dir.path / "raw.tsv");
  auto config = PipelineConfig::from_json(minimal_config(), dir.path);
  config.output_dir = dir.path / "out";
  std::ostringstream log;
  const RunOptions options{false, &log};

  CHECK_THROWS_AS(run_stage(Stage::TrainTokenizer, config, options), MissingDependencyError);
  run_stage(Stage::Prepare, config, options);
  run_stage(Stage::TrainTokenizer, config, options);
  CHECK_THROWS_AS(run_stage(Stage::Generate, config, options), MissingDependencyError);
  CHECK_THROWS_AS(run_stage(Stage::Report, config, options), MissingDependencyError);
  run_stage(Stage::Analyze, config, options);
  run_stage(Stage::Report, config, options);

  const ArtifactPaths a(config.output_dir);
  const auto measures = read_measure_table(a.measures());
  REQUIRE_FALSE(measures.empty());
  std::set<int> ages;
  for (const auto& r : measures) {
    CHECK(r.corpus_tag == "real");
    if (r.measure == "perplexity") CHECK_FALSE(r.value.has_value());
    if (r.measure == "ttr") CHECK(r.value.has_value());
    ages.insert(r.age);
  }
  CHECK(ages == std::set<int>{6, 12, 57, 60});
  const auto report = read_json(a.report_dir() / "report.json");
  CHECK(report["config_hash"] == config.hash());


  {
    std::ofstream more(dir.path / "raw.tsv", std::ios::app);
    more << "t60\tToy\tMOT\t60\tanother dog ball.\n";
  }
  run_stage(Stage::Prepare, config, options);
  CHECK_THROWS_AS(run_stage(Stage::Report, config, options), SchemaError);
}
