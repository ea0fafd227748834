#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdsgen/pipeline.hpp"

namespace cdsgen {

// Measures in the order they appear in every table.
inline const std::vector<std::string> kMeasureNames = {
    "ttr",      "mlu",      "root_dependencies", "perplexity", "lexical_divergence",
    "pos_noun", "pos_verb", "pos_pron",          "pos_adj",    "pos_intj"};

struct MeasureRow {
  std::string corpus_tag;
  int age = 0;
  std::string measure;
  std::size_t subsample_id = 0;
  std::optional<double> value;
};

std::vector<MeasureRow> read_measure_table(const std::filesystem::path& path);

struct FitRow {
  std::string corpus_tag;
  std::string measure;
  double a = 0, b = 0, c = 0, rss = 0;
};

struct NoveltyRow {
  std::string corpus_tag;
  std::size_t length = 0;
  double proportion = 0, sd = 0;
  std::size_t n = 0;
};

std::vector<FitRow> read_fit_table(const std::filesystem::path& path);
std::vector<NoveltyRow> read_novelty_table(const std::filesystem::path& path);

// Machine-readable report: per measure and age, a summary for each corpus tag
// (null when that series has no values), plus fits, novelty and notes.
// `tags` lists the corpora that were analyzed.
nlohmann::json build_report(const std::vector<MeasureRow>& measures,
                            const std::vector<FitRow>& fits,
                            const std::vector<NoveltyRow>& novelty,
                            const std::vector<std::string>& tags,
                            const std::vector<std::string>& notes);

std::string render_markdown(const nlohmann::json& report);
std::string render_svg(const nlohmann::json& report, const std::string& measure);

// Reads the analysis outputs, checks that every artifact comes from the same
// corpora, and writes report.md, report.json and optionally one SVG per
// measure. Throws SchemaError when corpus checksums disagree.
std::vector<std::filesystem::path> write_report(const ArtifactPaths& artifacts,
                                                const PipelineConfig& config, bool svg);

}  // namespace cdsgen
