// Rule-based stand-in for an external dependency parser. Tags every word from
// the toy lexicon, picks a root, attaches the rest, and writes CoNLL-U plus the
// companion manifest that ingest-parses expects.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cdsgen/corpus.hpp"
#include "cdsgen/treebank.hpp"
#include "toy_lexicon.hpp"

namespace {

using cdsgen::UDSentence;
using cdsgen::UDToken;

std::pair<std::string, std::string> tag_word(const std::string& w) {
  const auto& lex = toy::by_form();
  if (auto it = lex.find(w); it != lex.end()) return {it->second.lemma, it->second.upos};
  if (w.size() > 4 && w.ends_with("ing")) return {w.substr(0, w.size() - 3), "VERB"};
  return {w, "NOUN"};
}

std::string deprel_for(const std::string& upos) {
  static const std::map<std::string, std::string> rels = {
      {"DET", "det"},       {"ADJ", "amod"},  {"ADP", "case"},  {"PRON", "nsubj"},
      {"NOUN", "obj"},      {"AUX", "aux"},   {"ADV", "advmod"}, {"INTJ", "discourse"},
      {"CCONJ", "cc"},      {"PART", "mark"}, {"VERB", "conj"}};
  auto it = rels.find(upos);
  return it == rels.end() ? "dep" : it->second;
}

UDSentence annotate(const std::vector<std::string>& words) {
  UDSentence s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto [lemma, upos] = tag_word(words[i]);
    s.tokens.push_back({static_cast<int>(i + 1), words[i], lemma, upos, 0, ""});
  }
  auto first_of = [&](const std::string& upos) -> int {
    for (const auto& t : s.tokens) {
      if (t.upos == upos) return t.id;
    }
    return 0;
  };
  int root = first_of("VERB");
  if (root == 0) root = first_of("NOUN");
  if (root == 0 && !s.tokens.empty()) root = 1;

  for (auto& t : s.tokens) {
    if (t.id == root) {
      t.head = 0;
      t.deprel = "root";
      continue;
    }
    t.head = root;
    t.deprel = deprel_for(t.upos);
    if (t.upos == "DET" || t.upos == "ADJ" || t.upos == "ADP") {
      for (std::size_t j = static_cast<std::size_t>(t.id); j < s.tokens.size(); ++j) {
        if (s.tokens[j].upos == "NOUN") {
          if (s.tokens[j].id != t.id) t.head = s.tokens[j].id;
          break;
        }
      }
    }
  }
  const int punct = static_cast<int>(s.tokens.size()) + 1;
  s.tokens.push_back({punct, ".", ".", "PUNCT", root, "punct"});
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotate a normalized corpus with the toy lexicon"};
  std::string corpus_path, tag, conllu_path, manifest_path;
  app.add_option("corpus", corpus_path, "Normalized corpus text (index file alongside)")->required();
  app.add_option("tag", tag, "Corpus tag written to the manifest (real or generated)")->required();
  app.add_option("conllu", conllu_path, "Output CoNLL-U path")->required();
  app.add_option("manifest", manifest_path, "Output manifest path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto bins = cdsgen::read_normalized_corpus(corpus_path, cdsgen::index_path_for(corpus_path));
    std::vector<UDSentence> sentences;
    std::vector<cdsgen::SentenceSource> sources;
    for (const auto& bin : bins) {
      for (std::size_t i = 0; i < bin.utterances.size(); ++i) {
        sentences.push_back(annotate(bin.utterances[i].words));
        sources.push_back({tag, bin.center_months, i});
      }
    }
    const std::filesystem::path out(conllu_path);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + conllu_path);
    cdsgen::write_conllu(f, sentences);
    f.close();
    cdsgen::write_sentence_manifest(manifest_path, sources);
  } catch (const std::exception& e) {
    std::cerr << "toy_annotate: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
