#include "cdsgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cdsgen/errors.hpp"

namespace cdsgen {
namespace {

constexpr std::string_view kRequiredColumns[] = {"gloss", "speaker_role", "target_child_age",
                                                 "corpus_name", "transcript_id"};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Splits one delimited row; fields may be wrapped in double quotes with "" escapes.
std::vector<std::string> split_row(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool at_field_start = true;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && at_field_start) {
      quoted = true;
      at_field_start = false;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
      at_field_start = true;
    } else {
      field.push_back(c);
      at_field_start = false;
    }
  }
  out.push_back(std::move(field));
  return out;
}

SpeakerRole map_role(const std::string& code, const LoadOptions& options) {
  auto it = options.role_codes.find(code);
  return it == options.role_codes.end() ? SpeakerRole::Other : it->second;
}

// Empty or "NA"/"null" is an absent age; anything else must be a finite, non-negative number.
std::optional<double> parse_age(std::string_view s, bool& ok) {
  ok = true;
  s = trim(s);
  if (s.empty() || s == "NA" || s == "null" || s == "None") return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v) || v < 0.0) {
    ok = false;
    return std::nullopt;
  }
  return v;
}

void finish_record(RawRecord rec, std::string_view age_field, const LoadOptions& options,
                   LoadResult& result) {
  if (trim(rec.text).empty()) {
    result.rejected.push_back({rec.line, "empty text"});
    return;
  }
  bool ok = true;
  auto age = parse_age(age_field, ok);
  if (!ok) {
    result.rejected.push_back({rec.line, "invalid age '" + std::string(age_field) + "'"});
    return;
  }
  if (age && options.age_unit == AgeUnit::Days) *age /= kDaysPerMonth;
  rec.child_age_months = age;
  result.records.push_back(std::move(rec));
}

LoadResult parse_table(std::string_view content, const LoadOptions& options) {
  LoadResult result;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::vector<int> column(std::size(kRequiredColumns), -1);
  bool have_header = false;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (end == content.size()) break;
      continue;
    }
    auto fields = split_row(line, options.delimiter);
    if (!have_header) {
      for (std::size_t c = 0; c < std::size(kRequiredColumns); ++c) {
        auto it = std::find(fields.begin(), fields.end(), kRequiredColumns[c]);
        if (it == fields.end()) {
          throw SchemaError("missing required column '" + std::string(kRequiredColumns[c]) + "'");
        }
        column[c] = static_cast<int>(it - fields.begin());
      }
      have_header = true;
      continue;
    }
    const int needed = *std::max_element(column.begin(), column.end());
    if (static_cast<int>(fields.size()) <= needed) {
      result.rejected.push_back({line_no, "row has " + std::to_string(fields.size()) + " fields"});
      continue;
    }
    RawRecord rec;
    rec.line = line_no;
    rec.text = fields[column[0]];
    rec.speaker_role = map_role(std::string(trim(fields[column[1]])), options);
    rec.corpus_id = fields[column[3]];
    rec.transcript_id = fields[column[4]];
    finish_record(std::move(rec), fields[column[2]], options, result);
    if (end == content.size()) break;
  }
  if (!have_header) throw SchemaError("missing header row");
  return result;
}

LoadResult parse_json_lines(std::string_view content, const LoadOptions& options) {
  LoadResult result;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = trim(content.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.rejected.push_back({line_no, std::string("invalid json: ") + e.what()});
      continue;
    }
    if (!j.is_object()) {
      result.rejected.push_back({line_no, "not a json object"});
      continue;
    }
    for (auto col : kRequiredColumns) {
      if (!j.contains(std::string(col))) {
        throw SchemaError("missing required column '" + std::string(col) + "' at line " +
                          std::to_string(line_no));
      }
    }
    auto as_string = [](const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_null()) return "";
      return v.dump();
    };
    RawRecord rec;
    rec.line = line_no;
    rec.text = as_string(j["gloss"]);
    rec.speaker_role = map_role(as_string(j["speaker_role"]), options);
    rec.corpus_id = as_string(j["corpus_name"]);
    rec.transcript_id = as_string(j["transcript_id"]);
    finish_record(std::move(rec), as_string(j["target_child_age"]), options, result);
  }
  return result;
}

bool keep_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c == '_' || c == '-' || c >= 0x80;
}

}  // namespace

LoadResult parse_records(std::string_view content, const LoadOptions& options) {
  return options.format == RecordFormat::LineJson ? parse_json_lines(content, options)
                                                  : parse_table(content, options);
}

LoadResult load_records(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_records(read_file(path), options);
}

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0, e = current.size();
    while (b < e && current[b] == '-') ++b;
    while (e > b && current[e - 1] == '-') --e;
    if (e > b) words.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (keep_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

FilterResult filter_and_normalize(const std::vector<RawRecord>& records,
                                  const NormalizeOptions& options) {
  FilterResult result;
  result.counts.input = records.size();
  for (const auto& rec : records) {
    if (rec.speaker_role == SpeakerRole::Other) {
      ++result.counts.wrong_role;
      continue;
    }
    if (!rec.child_age_months) {
      ++result.counts.missing_age;
      continue;
    }
    auto words = normalize_words(rec.text);
    const bool has_marker = std::any_of(words.begin(), words.end(), [&](const std::string& w) {
      return std::find(options.incomprehensible_markers.begin(),
                       options.incomprehensible_markers.end(),
                       w) != options.incomprehensible_markers.end();
    });
    if (has_marker) {
      ++result.counts.marker;
      continue;
    }
    if (words.empty()) {
      ++result.counts.empty_after_normalization;
      continue;
    }
    result.utterances.push_back({std::move(words), *rec.child_age_months, rec.corpus_id});
  }
  result.counts.kept = result.utterances.size();
  return result;
}

std::string serialize_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    out += w;
    out += ' ';
  }
  out += '.';
  return out;
}

std::string serialize(const Utterance& u) { return serialize_words(u.words); }

std::optional<int> age_bin_center(double age_months) {
  if (!std::isfinite(age_months)) return std::nullopt;
  const double half = kBinWidth / 2.0;
  int center = kBinWidth * static_cast<int>(std::floor((age_months + half) / kBinWidth));
  if (age_months < center - half) center -= kBinWidth;
  if (age_months >= center + half) center += kBinWidth;
  if (center < kFirstBinCenter || center > kLastBinCenter) return std::nullopt;
  return center;
}

BinningResult bin_by_age(const std::vector<Utterance>& utterances) {
  std::map<int, std::vector<Utterance>> by_center;
  BinningResult result;
  for (const auto& u : utterances) {
    auto c = age_bin_center(u.source_age_months);
    if (!c) {
      ++result.dropped;
      continue;
    }
    by_center[*c].push_back(u);
  }
  for (auto& [c, us] : by_center) result.bins.push_back({c, std::move(us)});
  return result;
}

CorpusSplit split_train_validation(std::vector<AgeBin> bins, int validation_center) {
  CorpusSplit split;
  bool found = false;
  for (auto& b : bins) {
    if (b.center_months == validation_center) {
      if (found) throw ConfigError("duplicate age bin " + std::to_string(validation_center));
      split.validation_bin = std::move(b);
      found = true;
    } else {
      split.train_bins.push_back(std::move(b));
    }
  }
  if (!found) {
    throw ConfigError("validation age bin " + std::to_string(validation_center) +
                      " is not present in the corpus");
  }
  return split;
}

std::size_t word_count(const std::vector<Utterance>& utterances) {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.words.size();
  return n;
}

std::filesystem::path index_path_for(const std::filesystem::path& text_path) {
  auto p = text_path;
  p.replace_extension(".index.tsv");
  return p;
}

void write_normalized_corpus(const std::filesystem::path& text_path,
                             const std::filesystem::path& index_path,
                             const std::vector<AgeBin>& bins) {
  std::ofstream text(text_path, std::ios::binary);
  std::ofstream index(index_path, std::ios::binary);
  if (!text || !index) throw IoError("cannot write " + text_path.string());
  index << "first_line\tline_count\tage_bin\tcorpus_id\n";
  std::size_t line = 0;
  for (const auto& bin : bins) {
    std::size_t run_start = line;
    const std::string* run_corpus = nullptr;
    auto close_run = [&] {
      if (run_corpus && line > run_start) {
        index << run_start << '\t' << (line - run_start) << '\t' << bin.center_months << '\t'
              << *run_corpus << '\n';
      }
    };
    for (const auto& u : bin.utterances) {
      if (!run_corpus || *run_corpus != u.corpus_id) {
        close_run();
        run_start = line;
        run_corpus = &u.corpus_id;
      }
      text << serialize(u) << '\n';
      ++line;
    }
    close_run();
  }
  if (!text || !index) throw IoError("write failed for " + text_path.string());
}

std::vector<AgeBin> read_normalized_corpus(const std::filesystem::path& text_path,
                                           const std::filesystem::path& index_path) {
  std::ifstream text(text_path, std::ios::binary);
  if (!text) throw IoError("cannot read " + text_path.string());
  std::ifstream index(index_path, std::ios::binary);
  if (!index) throw IoError("cannot read " + index_path.string());

  std::vector<std::string> lines;
  for (std::string l; std::getline(text, l);) lines.push_back(std::move(l));

  std::map<int, AgeBin> bins;
  std::string row;
  std::getline(index, row);
  if (row != "first_line\tline_count\tage_bin\tcorpus_id") {
    throw SchemaError("unexpected corpus index header in " + index_path.string());
  }
  std::size_t row_no = 1;
  while (std::getline(index, row)) {
    ++row_no;
    if (row.empty()) continue;
    auto f = split_row(row, '\t');
    if (f.size() != 4) throw SchemaError("malformed index row " + std::to_string(row_no));
    std::size_t first = 0, count = 0;
    int age = 0;
    try {
      first = std::stoul(f[0]);
      count = std::stoul(f[1]);
      age = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw SchemaError("malformed index row " + std::to_string(row_no));
    }
    if (first + count > lines.size()) {
      throw SchemaError("index row " + std::to_string(row_no) + " exceeds corpus length");
    }
    auto& bin = bins[age];
    bin.center_months = age;
    for (std::size_t i = first; i < first + count; ++i) {
      auto words = normalize_words(lines[i]);
      if (words.empty()) continue;
      bin.utterances.push_back({std::move(words), static_cast<double>(age), f[3]});
    }
  }
  std::vector<AgeBin> out;
  for (auto& [c, b] : bins) out.push_back(std::move(b));
  return out;
}

}  // namespace cdsgen
