#include <cstdlib>
#include <fstream>
#include <set>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"
#include "cdsgen/pipeline.hpp"

namespace cdsgen {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(section));
    }
  }
}

template <class E>
E enum_value(const json& j, std::string_view key, const std::map<std::string, E>& names, E fallback) {
  if (!j.contains(key)) return fallback;
  const auto s = j.at(key).get<std::string>();
  auto it = names.find(s);
  if (it == names.end()) throw ConfigError("invalid value '" + s + "' for " + std::string(key));
  return it->second;
}

template <class E>
std::string enum_name(E v, const std::map<std::string, E>& names) {
  for (const auto& [name, value] : names) {
    if (value == v) return name;
  }
  return "?";
}

const std::map<std::string, RecordFormat> kFormats = {{"table", RecordFormat::DelimitedTable},
                                                      {"jsonl", RecordFormat::LineJson}};
const std::map<std::string, AgeUnit> kAgeUnits = {{"months", AgeUnit::Months},
                                                  {"days", AgeUnit::Days}};
const std::map<std::string, SpeakerRole> kRoles = {{"mother", SpeakerRole::Mother},
                                                   {"father", SpeakerRole::Father},
                                                   {"other", SpeakerRole::Other}};
const std::map<std::string, PerplexityScorer> kScorers = {{"auto", PerplexityScorer::Auto},
                                                          {"model", PerplexityScorer::Model},
                                                          {"logprobs", PerplexityScorer::LogprobFile},
                                                          {"none", PerplexityScorer::None}};
const std::map<std::string, LexicalFilter> kFilters = {{"per-sample", LexicalFilter::PerSample},
                                                       {"joint", LexicalFilter::Joint}};
const std::map<std::string, RootDependents> kRootModes = {
    {"direct", RootDependents::Direct}, {"descendants", RootDependents::Descendants}};
const std::map<std::string, RootPolicy> kRootPolicies = {{"strict", RootPolicy::Strict},
                                                         {"lenient", RootPolicy::Lenient}};

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    check_keys(j, "config", {"seed", "output_dir", "input", "tokenizer", "model", "generation",
                             "bootstrap", "analysis", "parses", "logprobs"});
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();

    if (!j.contains("input")) throw ConfigError("config needs an 'input' section");
    const auto& in = j.at("input");
    check_keys(in, "input", {"path", "format", "delimiter", "age_unit", "role_codes", "markers"});
    c.raw_input = in.at("path").get<std::string>();
    c.load.format = enum_value(in, "format", kFormats, c.load.format);
    c.load.age_unit = enum_value(in, "age_unit", kAgeUnits, c.load.age_unit);
    if (in.contains("delimiter")) {
      const auto d = in.at("delimiter").get<std::string>();
      if (d.size() != 1) throw ConfigError("input.delimiter must be one character");
      c.load.delimiter = d[0];
    }
    if (in.contains("role_codes")) {
      c.load.role_codes.clear();
      for (const auto& [code, role] : in.at("role_codes").items()) {
        auto it = kRoles.find(role.get<std::string>());
        if (it == kRoles.end()) throw ConfigError("unknown speaker role for code '" + code + "'");
        c.load.role_codes[code] = it->second;
      }
    }
    if (in.contains("markers")) {
      c.normalize.incomprehensible_markers = in.at("markers").get<std::vector<std::string>>();
    }

    if (j.contains("tokenizer")) {
      check_keys(j.at("tokenizer"), "tokenizer", {"vocab_size"});
      c.vocab_size = j.at("tokenizer").value("vocab_size", c.vocab_size);
    }
    if (j.contains("model")) {
      check_keys(j.at("model"), "model",
                 {"d_model", "n_blocks", "n_heads", "dropout", "seq_len", "vocab_size", "ffn_dim",
                  "learning_rate", "batch_size", "patience", "age_scale", "score_age_position",
                  "max_epochs", "micro_batch", "init_std"});
      c.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("generation")) {
      check_keys(j.at("generation"), "generation",
                 {"ages", "runs_per_age", "top_k", "temperature", "max_tokens", "seed_len_range",
                  "rng_seed"});
      c.generation = j.at("generation").get<GenerationSpec>();
    }
    if (j.contains("bootstrap")) {
      const auto& b = j.at("bootstrap");
      check_keys(b, "bootstrap", {"n_subsamples", "word_budget", "utterance_count"});
      c.bootstrap.n_subsamples = b.value("n_subsamples", c.bootstrap.n_subsamples);
      c.bootstrap.word_budget = b.value("word_budget", c.bootstrap.word_budget);
      c.bootstrap.utterance_count = b.value("utterance_count", c.bootstrap.utterance_count);
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      check_keys(a, "analysis",
                 {"reference_age", "perplexity_strings", "perplexity_min_words", "scorer",
                  "lexical_filter", "root_dependents", "root_policy"});
      auto& s = c.analysis;
      s.reference_age = a.value("reference_age", s.reference_age);
      s.perplexity_strings = a.value("perplexity_strings", s.perplexity_strings);
      s.perplexity_min_words = a.value("perplexity_min_words", s.perplexity_min_words);
      s.scorer = enum_value(a, "scorer", kScorers, s.scorer);
      s.lexical_filter = enum_value(a, "lexical_filter", kFilters, s.lexical_filter);
      s.root_dependents = enum_value(a, "root_dependents", kRootModes, s.root_dependents);
      s.root_policy = enum_value(a, "root_policy", kRootPolicies, s.root_policy);
    }
    if (j.contains("parses")) {
      for (const auto& p : j.at("parses")) {
        check_keys(p, "parses[]", {"conllu", "manifest"});
        c.parses.push_back({p.at("conllu").get<std::string>(), p.at("manifest").get<std::string>()});
      }
    }
    if (j.contains("logprobs") && !j.at("logprobs").is_null()) {
      c.logprobs = j.at("logprobs").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }

  c.model.validate();
  c.generation.validate();
  if (c.bootstrap.n_subsamples == 0) throw ConfigError("bootstrap.n_subsamples must be positive");
  if (c.bootstrap.word_budget == 0 || c.bootstrap.utterance_count == 0) {
    throw ConfigError("bootstrap sample sizes must be positive");
  }
  if (c.analysis.perplexity_strings == 0) {
    throw ConfigError("analysis.perplexity_strings must be positive");
  }
  return c;
}

json PipelineConfig::to_json() const {
  json roles = json::object();
  for (const auto& [code, role] : load.role_codes) roles[code] = enum_name(role, kRoles);
  json parse_list = json::array();
  for (const auto& p : parses) {
    parse_list.push_back({{"conllu", p.conllu.generic_string()},
                          {"manifest", p.manifest.generic_string()}});
  }
  return {
      {"seed", seed},
      {"input",
       {{"path", raw_input.generic_string()},
        {"format", enum_name(load.format, kFormats)},
        {"delimiter", std::string(1, load.delimiter)},
        {"age_unit", enum_name(load.age_unit, kAgeUnits)},
        {"role_codes", roles},
        {"markers", normalize.incomprehensible_markers}}},
      {"tokenizer", {{"vocab_size", vocab_size}}},
      {"model", model},
      {"generation", generation},
      {"bootstrap",
       {{"n_subsamples", bootstrap.n_subsamples},
        {"word_budget", bootstrap.word_budget},
        {"utterance_count", bootstrap.utterance_count}}},
      {"analysis",
       {{"reference_age", analysis.reference_age},
        {"perplexity_strings", analysis.perplexity_strings},
        {"perplexity_min_words", analysis.perplexity_min_words},
        {"scorer", enum_name(analysis.scorer, kScorers)},
        {"lexical_filter", enum_name(analysis.lexical_filter, kFilters)},
        {"root_dependents", enum_name(analysis.root_dependents, kRootModes)},
        {"root_policy", enum_name(analysis.root_policy, kRootPolicies)}}},
      {"parses", parse_list},
      {"logprobs", logprobs ? json(logprobs->generic_string()) : json(nullptr)},
  };
}

std::string PipelineConfig::hash() const { return checksum_string(to_json().dump()); }

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  const auto s = p.generic_string();
  if (s.starts_with("$OUT/")) return output_dir / s.substr(5);
  if (p.is_absolute()) return p;
  return base_dir / p;
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty component in override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' walks into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw MissingDependencyError("configuration file not found: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  auto config = PipelineConfig::from_json(j, base);
  if (const char* env = std::getenv("CDS_OUTPUT_DIR"); env && *env) config.output_dir = env;
  return config;
}

}  // namespace cdsgen
