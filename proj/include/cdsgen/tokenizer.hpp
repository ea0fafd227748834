#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cdsgen/corpus.hpp"

namespace cdsgen {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::string_view kUnkPiece = "[UNK]";
inline constexpr std::string_view kStopPiece = ".";
inline constexpr std::size_t kDefaultVocabSize = 8000;
// Words longer than this many characters encode as unk.
inline constexpr std::size_t kMaxWordChars = 100;

class WordPieceVocab {
 public:
  WordPieceVocab() = default;
  // Throws SchemaError on duplicates or when a special piece is missing.
  explicit WordPieceVocab(std::vector<std::string> pieces);

  std::size_t size() const { return pieces_.size(); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::string& piece(TokenId id) const;
  std::optional<TokenId> find(std::string_view piece) const;
  TokenId unk_id() const { return unk_id_; }
  TokenId stop_id() const { return stop_id_; }
  bool is_continuation(TokenId id) const;
  // Checksum over the serialized vocabulary file contents.
  std::string checksum() const;

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_id_ = 0;
  TokenId stop_id_ = 1;
};

// Splits a UTF-8 string into code points (invalid bytes stand alone).
std::vector<std::string_view> utf8_chars(std::string_view s);

// WordPiece training: start from characters (non-initial ones prefixed with
// "##") and repeatedly merge the adjacent pair maximizing
// count(pair) / (count(left) * count(right)). Ties go to the
// lexicographically smaller left piece, then right piece.
WordPieceVocab train_vocab(const std::vector<Utterance>& corpus,
                           std::size_t target_size = kDefaultVocabSize);

// Greedy longest-match-first segmentation of one word.
TokenSequence encode_word(std::string_view word, const WordPieceVocab& vocab);
// Words followed by the full-stop token.
TokenSequence encode(const Utterance& u, const WordPieceVocab& vocab);
// Whitespace-separated text; a bare "." is the full-stop token.
TokenSequence encode_line(std::string_view line, const WordPieceVocab& vocab);
// Throws RangeError on an invalid id.
std::string decode(const TokenSequence& ids, const WordPieceVocab& vocab);

struct BinStream {
  int age_months = 0;
  TokenSequence ids;
};

std::vector<BinStream> encode_corpus_stream(const std::vector<AgeBin>& bins,
                                            const WordPieceVocab& vocab);

void save_vocab(const std::filesystem::path& path, const WordPieceVocab& vocab);
WordPieceVocab load_vocab(const std::filesystem::path& path);

void save_streams(const std::filesystem::path& path, const std::vector<BinStream>& streams,
                  const WordPieceVocab& vocab);
// Throws SchemaError when the recorded vocab checksum differs from `vocab`.
std::vector<BinStream> load_streams(const std::filesystem::path& path, const WordPieceVocab& vocab);

}  // namespace cdsgen
