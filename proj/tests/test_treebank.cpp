#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/treebank.hpp"

using namespace cdsgen;

namespace {

// "do you want the ball ?" with want as root.
const char* kSentence =
    "# text = do you want the ball ?\n"
    "1\tdo\tdo\tAUX\t_\t_\t3\taux\t_\t_\n"
    "2\tyou\tyou\tPRON\t_\t_\t3\tnsubj\t_\t_\n"
    "3\twant\twant\tVERB\t_\t_\t0\troot\t_\t_\n"
    "4\tthe\tthe\tDET\t_\t_\t5\tdet\t_\t_\n"
    "5\tball\tball\tNOUN\t_\t_\t3\tobj\t_\t_\n"
    "6\t?\t?\tPUNCT\t_\t_\t3\tpunct\t_\t_\n"
    "\n";

const char* kTwoRoots =
    "1\thi\thi\tINTJ\t_\t_\t0\troot\t_\t_\n"
    "2\tdoggie\tdoggie\tNOUN\t_\t_\t0\troot\t_\t_\n"
    "\n";

}  // namespace

TEST_CASE("a well-formed block parses") {
  auto r = parse_conllu(kSentence);
  REQUIRE(r.sentences.size() == 1);
  const auto& s = r.sentences[0];
  CHECK(s.tokens.size() == 6);
  CHECK(*s.root() == 3);
  CHECK(s.tokens[4].upos == "NOUN");
  CHECK(s.tokens[4].head == 3);
  CHECK(r.report.comment_lines == 1);
  CHECK(r.report.token_lines == 6);
  CHECK(r.report.blocks == 1);
  CHECK(r.report.rejected_blocks == 0);
}

TEST_CASE("multiword ranges and empty nodes are skipped") {
  std::string text =
      "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
      "1\tdo\tdo\tAUX\t_\t_\t3\taux\t_\t_\n"
      "2\tn't\tnot\tPART\t_\t_\t3\tadvmod\t_\t_\n"
      "3\tgo\tgo\tVERB\t_\t_\t0\troot\t_\t_\n"
      "3.1\tgo\tgo\tVERB\t_\t_\t_\t_\t_\t_\n"
      "\n";
  auto r = parse_conllu(text);
  REQUIRE(r.sentences.size() == 1);
  CHECK(r.sentences[0].tokens.size() == 3);
  CHECK(r.report.range_lines == 2);
}

TEST_CASE("root policy") {
  auto strict = parse_conllu(kTwoRoots, RootPolicy::Strict);
  CHECK(strict.sentences.empty());
  CHECK(strict.report.rejected_blocks == 1);
  CHECK_FALSE(strict.report.problems.empty());

  auto lenient = parse_conllu(kTwoRoots, RootPolicy::Lenient);
  REQUIRE(lenient.sentences.size() == 1);
  const auto& s = lenient.sentences[0];
  CHECK(*s.root() == 1);
  CHECK(s.tokens[1].head == 1);
  CHECK(s.tokens[1].deprel == "parataxis");
  CHECK(lenient.report.repaired_blocks == 1);
}

TEST_CASE("malformed blocks are rejected with their line, others survive") {
  std::string text = std::string(kSentence) +
                     "1\tbad\tbad\tNOUN\t_\t_\tnotanumber\troot\t_\t_\n\n" +
                     "1\tshort\tline\n\n" +
                     "1\tgo\tgo\tVERB\t_\t_\t5\troot\t_\t_\n\n" + kSentence;
  auto r = parse_conllu(text);
  CHECK(r.sentences.size() == 2);
  CHECK(r.report.rejected_blocks == 3);
  CHECK(r.report.blocks == 5);
  REQUIRE(r.report.problems.size() >= 3);
  CHECK(r.report.problems[0].line == 9);
  CHECK(r.sentences[1].block_index == 4);
}

TEST_CASE("root dependency counts") {
  auto s = parse_conllu(kSentence).sentences.at(0);
  // aux, nsubj, obj (punct excluded)
  CHECK(*root_dependency_count(s, RootDependents::Direct) == 3);
  // plus "the" under "ball"
  CHECK(*root_dependency_count(s, RootDependents::Descendants) == 4);
  UDSentence none;
  none.tokens = {{1, "a", "a", "NOUN", 2, "dep"}, {2, "b", "b", "NOUN", 1, "dep"}};
  CHECK_FALSE(root_dependency_count(none).has_value());
}

TEST_CASE("part-of-speech rates exclude punctuation") {
  auto sents = parse_conllu(std::string(kSentence) + kTwoRoots, RootPolicy::Lenient).sentences;
  auto rates = pos_rates(sents);
  // 7 non-PUNCT tokens: AUX PRON VERB DET NOUN INTJ NOUN
  CHECK(rates["NOUN"] == doctest::Approx(2.0 / 7));
  CHECK(rates["VERB"] == doctest::Approx(1.0 / 7));
  CHECK(rates["PRON"] == doctest::Approx(1.0 / 7));
  CHECK(rates["ADJ"] == 0.0);
  CHECK(rates["INTJ"] == doctest::Approx(1.0 / 7));
  auto all = all_pos_rates(sents);
  double total = 0.0;
  for (const auto& [tag, v] : all) total += v;
  CHECK(total == doctest::Approx(1.0));
  CHECK(all.count("PUNCT") == 0);

  UDSentence only_punct;
  only_punct.tokens = {{1, ".", ".", "PUNCT", 0, "root"}};
  CHECK_THROWS_AS(pos_rates(std::vector<UDSentence>{only_punct}), UndefinedMeasureError);
}

TEST_CASE("lemma streams are lowercased content lemmas") {
  auto s = parse_conllu(kSentence).sentences.at(0);
  s.tokens[2].lemma = "Want";
  auto lemmas = lemma_stream({s});
  CHECK(lemmas == std::vector<std::string>{"do", "you", "want", "the", "ball"});
  CHECK(content_token_count(s) == 5);
}

TEST_CASE("write then parse round trip and manifest attachment") {
  auto sents = parse_conllu(std::string(kSentence) + kSentence).sentences;
  std::ostringstream out;
  write_conllu(out, sents);
  auto back = parse_conllu(out.str());
  REQUIRE(back.sentences.size() == 2);
  CHECK(back.sentences[1].tokens[4].form == "ball");

  auto dir = std::filesystem::temp_directory_path() / "cdsgen_tb_test";
  std::filesystem::create_directories(dir);
  std::vector<SentenceSource> rows = {{"real", 12, 0}, {"generated", 24, 7}};
  write_sentence_manifest(dir / "m.tsv", rows);
  auto read = read_sentence_manifest(dir / "m.tsv");
  REQUIRE(read.size() == 2);
  CHECK(read[1].corpus_tag == "generated");
  CHECK(read[1].age_bin == 24);
  CHECK(read[1].utterance_index == 7);
  attach_sources(back.sentences, read, back.report.blocks);
  CHECK(back.sentences[0].source.age_bin == 12);
  CHECK(back.sentences[1].source.utterance_index == 7);
  CHECK_THROWS_AS(attach_sources(back.sentences, {rows[0]}, 2), SchemaError);
  std::filesystem::remove_all(dir);
}
