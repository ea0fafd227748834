#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Age-conditioned language model for child-directed speech"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  std::string output_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool svg = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "Pipeline configuration file")->capture_default_str();
  app.add_option("-o,--output-dir", output_dir, "Artifact directory (overrides CDS_OUTPUT_DIR)");
  app.add_option("-s,--set", overrides, "Override a config value, e.g. model.d_model=64");
  app.add_option("--seed", seed, "Master RNG seed");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"prepare", "Filter, normalize and bin the raw transcript export"},
      {"train-tokenizer", "Train the word-piece vocabulary and encode the corpus"},
      {"train", "Train the language model with early stopping"},
      {"generate", "Generate per-age synthetic corpora"},
      {"ingest-parses", "Read CoNLL-U annotations into measure inputs"},
      {"analyze", "Compute measures, fits and novelty tables"},
      {"report", "Merge analysis tables into report.md / report.json"},
      {"all", "Run every stage in order (ingest-parses only if parses are configured)"},
  };
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    if (std::string_view(c.name) == "report" || std::string_view(c.name) == "all") {
      sub->add_flag("--svg", svg, "Also write one SVG chart per measure");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    auto config = cdsgen::load_config(config_path, overrides);
    if (!output_dir.empty()) config.output_dir = output_dir;
    std::ostringstream sink;
    cdsgen::RunOptions options{svg, quiet ? static_cast<std::ostream*>(&sink) : &std::cerr};

    const std::string name = app.get_subcommands().front()->get_name();
    std::vector<cdsgen::Stage> stages;
    if (name == "all") {
      using S = cdsgen::Stage;
      stages = {S::Prepare, S::TrainTokenizer, S::Train, S::Generate};
      if (!config.parses.empty()) stages.push_back(S::IngestParses);
      stages.push_back(S::Analyze);
      stages.push_back(S::Report);
    } else {
      stages = {*cdsgen::parse_stage(name)};
    }
    for (auto s : stages) cdsgen::run_stage(s, config, options);
  } catch (const std::exception& e) {
    std::cerr << "cdsgen: error: " << e.what() << '\n';
    return cdsgen::exit_code_for(e);
  }
  return 0;
}
