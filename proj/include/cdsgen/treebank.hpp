#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdsgen/corpus.hpp"

namespace cdsgen {

struct UDToken {
  int id = 0;
  std::string form;
  std::string lemma;
  std::string upos;
  int head = 0;  // 0 = root
  std::string deprel;
};

struct SentenceSource {
  std::string corpus_tag;
  int age_bin = 0;
  std::size_t utterance_index = 0;
};

struct UDSentence {
  std::vector<UDToken> tokens;
  SentenceSource source;
  std::size_t block_index = 0;  // position among all blocks of the file
  std::size_t first_line = 0;

  // Id of the unique head-0 token, if exactly one exists.
  std::optional<int> root() const;
};

enum class RootPolicy {
  Strict,   // blocks without exactly one root are rejected
  Lenient,  // extra roots are reattached to the first with deprel "parataxis"
};

struct ConlluReport {
  std::size_t lines = 0;
  std::size_t token_lines = 0;   // consumed into accepted sentences
  std::size_t comment_lines = 0;
  std::size_t range_lines = 0;   // multiword ranges and empty nodes
  std::size_t blank_lines = 0;
  std::size_t rejected_lines = 0;
  std::size_t rejected_blocks = 0;
  std::size_t repaired_blocks = 0;
  std::size_t blocks = 0;
  std::vector<Rejection> problems;
};

struct ConlluResult {
  std::vector<UDSentence> sentences;
  ConlluReport report;
};

ConlluResult parse_conllu(std::string_view content, RootPolicy policy = RootPolicy::Strict);
ConlluResult parse_conllu_file(const std::filesystem::path& path,
                               RootPolicy policy = RootPolicy::Strict);

// Companion manifest: TSV header "corpus_tag age_bin utterance_index", one row
// per CoNLL-U block in file order.
std::vector<SentenceSource> read_sentence_manifest(const std::filesystem::path& path);
void write_sentence_manifest(const std::filesystem::path& path,
                             const std::vector<SentenceSource>& rows);
// Throws SchemaError when the manifest has fewer rows than blocks.
void attach_sources(std::vector<UDSentence>& sentences,
                    const std::vector<SentenceSource>& manifest, std::size_t block_count);

void write_conllu(std::ostream& out, const std::vector<UDSentence>& sentences);

inline const std::vector<std::string> kReportedPosCategories = {"NOUN", "VERB", "PRON", "ADJ",
                                                                "INTJ"};

// count(upos) / count(non-PUNCT tokens) for each category. Throws
// UndefinedMeasureError when there are no non-PUNCT tokens.
std::map<std::string, double> pos_rates(const std::vector<const UDSentence*>& sentences,
                                        const std::vector<std::string>& categories);
std::map<std::string, double> pos_rates(const std::vector<UDSentence>& sentences,
                                        const std::vector<std::string>& categories =
                                            kReportedPosCategories);
// Rates for every non-PUNCT tag present.
std::map<std::string, double> all_pos_rates(const std::vector<UDSentence>& sentences);

enum class RootDependents {
  Direct,       // children of the root
  Descendants,  // every token below the root
};

// Non-PUNCT dependents of the root; nullopt without a unique root.
std::optional<int> root_dependency_count(const UDSentence& sentence,
                                         RootDependents mode = RootDependents::Direct);

std::size_t content_token_count(const UDSentence& sentence);
std::vector<std::string> lemmas_of(const UDSentence& sentence);
// Lowercased lemmas of non-PUNCT tokens in order.
std::vector<std::string> lemma_stream(const std::vector<UDSentence>& sentences);

}  // namespace cdsgen
