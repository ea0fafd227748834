#include <doctest.h>

#include <filesystem>

#include "cdsgen/errors.hpp"
#include "cdsgen/rng.hpp"
#include "cdsgen/tokenizer.hpp"
#include "oracles.hpp"

using namespace cdsgen;

namespace {

std::vector<Utterance> repeat_words(const std::map<std::string, int>& counts) {
  std::vector<Utterance> out;
  for (const auto& [w, c] : counts) {
    for (int i = 0; i < c; ++i) out.push_back({{w}, 12.0, "t"});
  }
  return out;
}

}  // namespace

TEST_CASE("first merges on a tiny corpus") {
  // Every candidate pair scores 0.05 here, so the order is decided by the
  // lexicographic tie-break alone.
  std::map<std::string, int> counts = {{"hug", 10}, {"hugs", 5}, {"pug", 5}};
  auto corpus = repeat_words(counts);
  // [UNK] . h p ##g ##s ##u
  auto base = train_vocab(corpus, 7);
  CHECK(base.size() == 7);
  auto one = train_vocab(corpus, 8);
  CHECK(one.pieces().back() == "##gs");
  auto two = train_vocab(corpus, 9);
  CHECK(two.pieces().back() == "##ug");
}

TEST_CASE("trainer matches a brute-force trainer") {
  Rng rng(11);
  const std::string letters = "abcde";
  for (int trial = 0; trial < 25; ++trial) {
    std::map<std::string, int> counts;
    const int n_words = 3 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n_words; ++i) {
      std::string w;
      const auto len = 1 + rng.below(6);
      for (std::size_t k = 0; k < len; ++k) w += letters[rng.below(letters.size())];
      counts[w] += 1 + static_cast<int>(rng.below(7));
    }
    auto corpus = repeat_words(counts);
    const auto base = oracle::wordpiece_vocab(counts, 0).size();
    for (std::size_t extra : {0, 1, 3, 8, 20}) {
      CHECK(train_vocab(corpus, base + extra).pieces() ==
            oracle::wordpiece_vocab(counts, base + extra));
    }
  }
}

TEST_CASE("vocabulary validation") {
  CHECK_THROWS_AS(train_vocab({{{"abc"}, 3, "x"}}, 3), ConfigError);
  CHECK_THROWS_AS(train_vocab({}, 100), ConfigError);
  CHECK_THROWS(WordPieceVocab({"a", "b"}));
  CHECK_THROWS(WordPieceVocab({"[UNK]", ".", "a", "a"}));
}

TEST_CASE("encoding is greedy longest match and decodes back") {
  WordPieceVocab v({"[UNK]", ".", "h", "##u", "##g", "##s", "hug", "##gs"});
  auto ids = encode_word("hugs", v);
  REQUIRE(ids.size() == 2);
  CHECK(v.piece(ids[0]) == "hug");
  CHECK(v.piece(ids[1]) == "##s");
  CHECK(encode_word("zz", v) == TokenSequence{v.unk_id()});
  Utterance u{{"hug", "hugs"}, 3, "x"};
  auto all = encode(u, v);
  CHECK(all.back() == v.stop_id());
  CHECK(decode(all, v) == "hug hugs .");
  CHECK(encode_word(std::string(101, 'h'), v) == TokenSequence{v.unk_id()});
}

TEST_CASE("round trip over words seen in training") {
  std::vector<Utterance> corpus = {
      {{"where's", "the", "doggie"}, 12, "a"},
      {{"you", "want", "more", "juice"}, 15, "a"},
      {{"café", "naïve", "ok"}, 15, "a"},
      {{"the", "doggie", "says", "woof"}, 18, "b"},
  };
  for (std::size_t size : {std::size_t{40}, std::size_t{60}, std::size_t{200}}) {
    auto v = train_vocab(corpus, size);
    for (const auto& u : corpus) CHECK(decode(encode(u, v), v) == serialize(u));
  }
}

TEST_CASE("utf8 code points stay whole") {
  auto cs = utf8_chars("aé€");
  REQUIRE(cs.size() == 3);
  CHECK(cs[1] == "é");
  CHECK(cs[2] == "€");
}

TEST_CASE("vocab and stream files round trip with checksum check") {
  auto dir = std::filesystem::temp_directory_path() / "cdsgen_tok_test";
  std::filesystem::create_directories(dir);
  std::vector<Utterance> corpus = {{{"more", "milk"}, 6, "a"}, {{"more"}, 9, "a"}};
  auto v = train_vocab(corpus, 20);
  save_vocab(dir / "vocab.txt", v);
  auto v2 = load_vocab(dir / "vocab.txt");
  CHECK(v2.pieces() == v.pieces());
  CHECK(v2.checksum() == v.checksum());

  std::vector<AgeBin> bins = {{6, {corpus[0]}}, {9, {corpus[1]}}};
  auto streams = encode_corpus_stream(bins, v);
  REQUIRE(streams.size() == 2);
  CHECK(streams[0].ids == encode(corpus[0], v));
  save_streams(dir / "streams.txt", streams, v);
  auto back = load_streams(dir / "streams.txt", v);
  REQUIRE(back.size() == 2);
  CHECK(back[1].ids == streams[1].ids);
  CHECK(back[1].age_months == 9);

  auto other = train_vocab(corpus, 12);
  CHECK_THROWS_AS(load_streams(dir / "streams.txt", other), SchemaError);
  std::filesystem::remove_all(dir);
}
