#include "cdsgen/treebank.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cdsgen/errors.hpp"

namespace cdsgen {
namespace {

constexpr std::string_view kPunct = "PUNCT";

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? line.size() - pos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Block {
  std::vector<std::pair<std::size_t, std::string_view>> token_lines;
  std::size_t first_line = 0;
  std::size_t range_lines = 0;
  std::size_t comment_lines = 0;
  bool open = false;
};

}  // namespace

std::optional<int> UDSentence::root() const {
  std::optional<int> r;
  for (const auto& t : tokens) {
    if (t.head == 0) {
      if (r) return std::nullopt;
      r = t.id;
    }
  }
  return r;
}

ConlluResult parse_conllu(std::string_view content, RootPolicy policy) {
  ConlluResult result;
  auto& rep = result.report;
  Block block;

  auto reject = [&](std::size_t line, std::string reason) {
    rep.problems.push_back({line, std::move(reason)});
    ++rep.rejected_blocks;
    rep.rejected_lines += block.token_lines.size();
  };

  auto close_block = [&] {
    if (!block.open) return;
    const std::size_t block_index = rep.blocks++;
    rep.comment_lines += block.comment_lines;
    rep.range_lines += block.range_lines;
    UDSentence s;
    s.block_index = block_index;
    s.first_line = block.first_line;
    bool ok = true;
    for (const auto& [line_no, line] : block.token_lines) {
      auto cols = split_tabs(line);
      if (cols.size() != 10) {
        reject(line_no, "expected 10 columns, found " + std::to_string(cols.size()));
        ok = false;
        break;
      }
      auto id = parse_int(cols[0]);
      auto head = parse_int(cols[6]);
      if (!id || *id != static_cast<int>(s.tokens.size()) + 1) {
        reject(line_no, "non-consecutive token id '" + std::string(cols[0]) + "'");
        ok = false;
        break;
      }
      if (!head || *head < 0) {
        reject(line_no, "invalid head '" + std::string(cols[6]) + "'");
        ok = false;
        break;
      }
      s.tokens.push_back({*id, std::string(cols[1]), std::string(cols[2]), std::string(cols[3]),
                          *head, std::string(cols[7])});
    }
    if (ok && s.tokens.empty()) {
      reject(block.first_line, "block has no tokens");
      ok = false;
    }
    if (ok) {
      const int n = static_cast<int>(s.tokens.size());
      for (const auto& t : s.tokens) {
        if (t.head > n) {
          reject(block.first_line, "head " + std::to_string(t.head) + " out of range");
          ok = false;
          break;
        }
      }
    }
    if (ok) {
      const auto roots = std::count_if(s.tokens.begin(), s.tokens.end(),
                                       [](const UDToken& t) { return t.head == 0; });
      if (roots == 0) {
        reject(block.first_line, "block has no root");
        ok = false;
      } else if (roots > 1) {
        if (policy == RootPolicy::Strict) {
          reject(block.first_line, "block has " + std::to_string(roots) + " roots");
          ok = false;
        } else {
          int first_root = 0;
          for (auto& t : s.tokens) {
            if (t.head != 0) continue;
            if (first_root == 0) {
              first_root = t.id;
            } else {
              t.head = first_root;
              t.deprel = "parataxis";
            }
          }
          ++rep.repaired_blocks;
        }
      }
    }
    if (ok) {
      rep.token_lines += block.token_lines.size();
      result.sentences.push_back(std::move(s));
    }
    block = Block{};
  };

  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    ++rep.lines;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      ++rep.blank_lines;
      close_block();
      continue;
    }
    if (!block.open) {
      block.open = true;
      block.first_line = line_no;
    }
    if (line.front() == '#') {
      ++block.comment_lines;
      continue;
    }
    auto id_field = line.substr(0, line.find('\t'));
    if (id_field.find('-') != std::string_view::npos ||
        id_field.find('.') != std::string_view::npos) {
      ++block.range_lines;
      continue;
    }
    block.token_lines.emplace_back(line_no, line);
  }
  close_block();
  return result;
}

ConlluResult parse_conllu_file(const std::filesystem::path& path, RootPolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_conllu(ss.str(), policy);
}

std::vector<SentenceSource> read_sentence_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "corpus_tag\tage_bin\tutterance_index") {
    throw SchemaError(path.string() + ": unexpected sentence manifest header");
  }
  std::vector<SentenceSource> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    std::optional<int> age = cols.size() == 3 ? parse_int(cols[1]) : std::nullopt;
    std::optional<int> idx = cols.size() == 3 ? parse_int(cols[2]) : std::nullopt;
    if (!age || !idx || *idx < 0) {
      throw SchemaError(path.string() + ": malformed row " + std::to_string(line_no));
    }
    rows.push_back({std::string(cols[0]), *age, static_cast<std::size_t>(*idx)});
  }
  return rows;
}

void write_sentence_manifest(const std::filesystem::path& path,
                             const std::vector<SentenceSource>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "corpus_tag\tage_bin\tutterance_index\n";
  for (const auto& r : rows) out << r.corpus_tag << '\t' << r.age_bin << '\t' << r.utterance_index << '\n';
}

void attach_sources(std::vector<UDSentence>& sentences,
                    const std::vector<SentenceSource>& manifest, std::size_t block_count) {
  if (manifest.size() != block_count) {
    throw SchemaError("sentence manifest has " + std::to_string(manifest.size()) +
                      " rows for " + std::to_string(block_count) + " CoNLL-U blocks");
  }
  for (auto& s : sentences) s.source = manifest.at(s.block_index);
}

void write_conllu(std::ostream& out, const std::vector<UDSentence>& sentences) {
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) {
      out << t.id << '\t' << t.form << '\t' << t.lemma << '\t' << t.upos << "\t_\t_\t" << t.head
          << '\t' << t.deprel << "\t_\t_\n";
    }
    out << '\n';
  }
}

std::map<std::string, double> pos_rates(const std::vector<const UDSentence*>& sentences,
                                        const std::vector<std::string>& categories) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto* s : sentences) {
    for (const auto& t : s->tokens) {
      if (t.upos == kPunct) continue;
      ++total;
      ++counts[t.upos];
    }
  }
  if (total == 0) throw UndefinedMeasureError("POS rates need at least one non-punctuation token");
  std::map<std::string, double> out;
  const auto denom = static_cast<double>(total);
  if (categories.empty()) {
    for (const auto& [tag, c] : counts) out[tag] = static_cast<double>(c) / denom;
  } else {
    for (const auto& cat : categories) {
      auto it = counts.find(cat);
      out[cat] = it == counts.end() ? 0.0 : static_cast<double>(it->second) / denom;
    }
  }
  return out;
}

std::map<std::string, double> pos_rates(const std::vector<UDSentence>& sentences,
                                        const std::vector<std::string>& categories) {
  std::vector<const UDSentence*> ptrs;
  for (const auto& s : sentences) ptrs.push_back(&s);
  return pos_rates(ptrs, categories);
}

std::map<std::string, double> all_pos_rates(const std::vector<UDSentence>& sentences) {
  return pos_rates(sentences, std::vector<std::string>{});
}

std::optional<int> root_dependency_count(const UDSentence& sentence, RootDependents mode) {
  auto root = sentence.root();
  if (!root) return std::nullopt;
  int count = 0;
  for (const auto& t : sentence.tokens) {
    if (t.upos == kPunct || t.id == *root) continue;
    if (mode == RootDependents::Direct) {
      if (t.head == *root) ++count;
      continue;
    }
    // Walk up; the step bound guards against cycles in malformed trees.
    int h = t.head;
    for (std::size_t steps = 0; h != 0 && h != *root && steps < sentence.tokens.size(); ++steps) {
      h = sentence.tokens[static_cast<std::size_t>(h - 1)].head;
    }
    if (h == *root) ++count;
  }
  return count;
}

std::size_t content_token_count(const UDSentence& sentence) {
  return static_cast<std::size_t>(std::count_if(
      sentence.tokens.begin(), sentence.tokens.end(),
      [](const UDToken& t) { return t.upos != kPunct; }));
}

std::vector<std::string> lemmas_of(const UDSentence& sentence) {
  std::vector<std::string> out;
  for (const auto& t : sentence.tokens) {
    if (t.upos != kPunct) out.push_back(lower(t.lemma));
  }
  return out;
}

std::vector<std::string> lemma_stream(const std::vector<UDSentence>& sentences) {
  std::vector<std::string> out;
  for (const auto& s : sentences) {
    auto l = lemmas_of(s);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

}  // namespace cdsgen
