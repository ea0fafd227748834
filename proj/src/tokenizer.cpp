#include "cdsgen/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cdsgen/errors.hpp"
#include "cdsgen/hashing.hpp"

namespace cdsgen {

WordPieceVocab::WordPieceVocab(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  index_.reserve(pieces_.size());
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (pieces_[i].empty()) throw SchemaError("empty vocabulary piece at id " + std::to_string(i));
    if (!index_.emplace(pieces_[i], static_cast<TokenId>(i)).second) {
      throw SchemaError("duplicate vocabulary piece '" + pieces_[i] + "'");
    }
  }
  auto unk = find(kUnkPiece);
  auto stop = find(kStopPiece);
  if (!unk || !stop) throw SchemaError("vocabulary lacks the unk or full-stop piece");
  unk_id_ = *unk;
  stop_id_ = *stop;
}

const std::string& WordPieceVocab::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(pieces_.size()));
  }
  return pieces_[id];
}

std::optional<TokenId> WordPieceVocab::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool WordPieceVocab::is_continuation(TokenId id) const {
  return piece(id).starts_with(kContinuationPrefix);
}

std::string WordPieceVocab::checksum() const {
  Fnv1a h;
  for (const auto& p : pieces_) {
    h.update(p);
    h.update("\n");
  }
  return h.hex();
}

std::vector<std::string_view> utf8_chars(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

using PairKey = std::uint64_t;
PairKey pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}
int pair_left(PairKey k) { return static_cast<int>(k >> 32); }
int pair_right(PairKey k) { return static_cast<int>(k & 0xffffffffu); }

struct TrainWord {
  std::vector<int> pieces;
  std::uint64_t count = 0;
};

class WordPieceTrainer {
 public:
  WordPieceTrainer(const std::vector<Utterance>& corpus) {
    std::map<std::string, std::uint64_t> word_counts;
    for (const auto& u : corpus) {
      for (const auto& w : u.words) ++word_counts[w];
    }
    std::set<std::string> alphabet;
    std::vector<std::pair<std::vector<std::string>, std::uint64_t>> split_words;
    for (const auto& [w, c] : word_counts) {
      auto chars = utf8_chars(w);
      if (chars.empty() || chars.size() > kMaxWordChars) continue;
      std::vector<std::string> pieces;
      for (std::size_t i = 0; i < chars.size(); ++i) {
        pieces.push_back(i == 0 ? std::string(chars[i])
                                : std::string(kContinuationPrefix) + std::string(chars[i]));
        alphabet.insert(pieces.back());
      }
      split_words.emplace_back(std::move(pieces), c);
    }
    add_piece(std::string(kUnkPiece));
    add_piece(std::string(kStopPiece));
    for (const auto& a : alphabet) add_piece(a);
    for (auto& [pieces, c] : split_words) {
      TrainWord tw;
      tw.count = c;
      for (const auto& p : pieces) tw.pieces.push_back(ids_.at(p));
      words_.push_back(std::move(tw));
    }
    for (std::size_t w = 0; w < words_.size(); ++w) add_word_stats(static_cast<int>(w), +1);
  }

  std::size_t vocab_size() const { return vocab_.size(); }

  // Performs one merge; returns false when no candidate pair remains.
  bool merge_best() {
    PairKey best = 0;
    std::uint64_t best_count = 0, best_denominator = 1;
    bool found = false;
    for (const auto& [key, count] : pair_counts_) {
      if (count == 0) continue;
      const std::uint64_t den = piece_counts_[pair_left(key)] * piece_counts_[pair_right(key)];
      if (!found) {
        best = key, best_count = count, best_denominator = den, found = true;
        continue;
      }
      // count/den vs best_count/best_denominator compared exactly.
      const auto lhs = static_cast<unsigned __int128>(count) * best_denominator;
      const auto rhs = static_cast<unsigned __int128>(best_count) * den;
      if (lhs > rhs || (lhs == rhs && tie_before(key, best))) {
        best = key, best_count = count, best_denominator = den;
      }
    }
    if (!found) return false;
    apply_merge(best);
    return true;
  }

  std::vector<std::string> vocab() const { return vocab_; }

 private:
  bool tie_before(PairKey a, PairKey b) const {
    const auto& al = vocab_[pair_left(a)];
    const auto& bl = vocab_[pair_left(b)];
    if (al != bl) return al < bl;
    return vocab_[pair_right(a)] < vocab_[pair_right(b)];
  }

  int add_piece(const std::string& p) {
    auto [it, inserted] = ids_.emplace(p, static_cast<int>(all_pieces_.size()));
    if (inserted) {
      all_pieces_.push_back(p);
      piece_counts_.push_back(0);
      vocab_.push_back(p);
    }
    return it->second;
  }

  void add_word_stats(int w, int sign) {
    const auto& word = words_[w];
    const auto delta = word.count;
    for (std::size_t i = 0; i < word.pieces.size(); ++i) {
      auto& pc = piece_counts_[word.pieces[i]];
      pc = sign > 0 ? pc + delta : pc - delta;
      if (i + 1 < word.pieces.size()) {
        const auto key = pair_key(word.pieces[i], word.pieces[i + 1]);
        auto& c = pair_counts_[key];
        if (sign > 0) {
          c += delta;
          pair_words_[key].push_back(w);
        } else {
          c -= delta;
          if (c == 0) pair_counts_.erase(key);
        }
      }
    }
  }

  void apply_merge(PairKey key) {
    const int left = pair_left(key), right = pair_right(key);
    const std::string merged =
        all_pieces_[left] + all_pieces_[right].substr(kContinuationPrefix.size());
    const int merged_id = add_piece(merged);
    auto candidates = std::move(pair_words_[key]);
    pair_words_.erase(key);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (int w : candidates) {
      auto& pieces = words_[w].pieces;
      bool present = false;
      for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
        if (pieces[i] == left && pieces[i + 1] == right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      add_word_stats(w, -1);
      std::vector<int> next;
      next.reserve(pieces.size());
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i + 1 < pieces.size() && pieces[i] == left && pieces[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(pieces[i]);
        }
      }
      pieces = std::move(next);
      add_word_stats(w, +1);
    }
  }

  std::vector<TrainWord> words_;
  std::vector<std::string> all_pieces_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::uint64_t> piece_counts_;
  std::unordered_map<PairKey, std::uint64_t> pair_counts_;
  std::unordered_map<PairKey, std::vector<int>> pair_words_;
};

}  // namespace

WordPieceVocab train_vocab(const std::vector<Utterance>& corpus, std::size_t target_size) {
  if (corpus.empty()) throw ConfigError("cannot train a vocabulary on an empty corpus");
  WordPieceTrainer trainer(corpus);
  if (trainer.vocab_size() > target_size) {
    throw ConfigError("target vocabulary size " + std::to_string(target_size) +
                      " is below alphabet plus specials (" +
                      std::to_string(trainer.vocab_size()) + ")");
  }
  while (trainer.vocab_size() < target_size && trainer.merge_best()) {
  }
  return WordPieceVocab(trainer.vocab());
}

TokenSequence encode_word(std::string_view word, const WordPieceVocab& vocab) {
  if (word == kStopPiece) return {vocab.stop_id()};
  const auto chars = utf8_chars(word);
  if (chars.empty()) return {};
  if (chars.size() > kMaxWordChars) return {vocab.unk_id()};
  std::vector<std::size_t> offsets;
  offsets.reserve(chars.size() + 1);
  for (auto c : chars) offsets.push_back(static_cast<std::size_t>(c.data() - word.data()));
  offsets.push_back(word.size());

  TokenSequence out;
  std::string candidate;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::optional<TokenId> match;
    std::size_t end = chars.size();
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate = kContinuationPrefix;
      candidate.append(word.substr(offsets[start], offsets[end] - offsets[start]));
      if ((match = vocab.find(candidate))) break;
    }
    if (!match) return {vocab.unk_id()};
    out.push_back(*match);
    start = end;
  }
  return out;
}

TokenSequence encode(const Utterance& u, const WordPieceVocab& vocab) {
  TokenSequence out;
  for (const auto& w : u.words) {
    auto ids = encode_word(w, vocab);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  out.push_back(vocab.stop_id());
  return out;
}

TokenSequence encode_line(std::string_view line, const WordPieceVocab& vocab) {
  TokenSequence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) {
      auto ids = encode_word(line.substr(i, j - i), vocab);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    i = j;
  }
  return out;
}

std::string decode(const TokenSequence& ids, const WordPieceVocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const auto& p = vocab.piece(id);
    if (p.starts_with(kContinuationPrefix)) {
      out.append(p, kContinuationPrefix.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out += p;
    }
  }
  return out;
}

std::vector<BinStream> encode_corpus_stream(const std::vector<AgeBin>& bins,
                                            const WordPieceVocab& vocab) {
  std::unordered_map<std::string, TokenSequence> cache;
  std::vector<BinStream> out;
  out.reserve(bins.size());
  for (const auto& bin : bins) {
    BinStream s{bin.center_months, {}};
    for (const auto& u : bin.utterances) {
      for (const auto& w : u.words) {
        auto it = cache.find(w);
        if (it == cache.end()) it = cache.emplace(w, encode_word(w, vocab)).first;
        s.ids.insert(s.ids.end(), it->second.begin(), it->second.end());
      }
      s.ids.push_back(vocab.stop_id());
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_vocab(const std::filesystem::path& path, const WordPieceVocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : vocab.pieces()) out << p << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

WordPieceVocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> pieces;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(std::move(line));
  }
  return WordPieceVocab(std::move(pieces));
}

namespace {
constexpr std::string_view kStreamMagic = "#cdsgen-token-stream 1";
}

void save_streams(const std::filesystem::path& path, const std::vector<BinStream>& streams,
                  const WordPieceVocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << kStreamMagic << '\n' << "#vocab_checksum " << vocab.checksum() << '\n';
  for (const auto& s : streams) {
    out << "#bin " << s.age_months << ' ' << s.ids.size() << '\n';
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      out << s.ids[i] << ((i + 1) % 32 == 0 || i + 1 == s.ids.size() ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<BinStream> load_streams(const std::filesystem::path& path,
                                    const WordPieceVocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kStreamMagic) {
    throw SchemaError(path.string() + " is not a token-stream file");
  }
  std::string tag, checksum;
  if (!(in >> tag >> checksum) || tag != "#vocab_checksum") {
    throw SchemaError(path.string() + ": missing vocab checksum");
  }
  if (checksum != vocab.checksum()) {
    throw SchemaError(path.string() + " was encoded with a different vocabulary");
  }
  std::vector<BinStream> out;
  while (in >> tag) {
    if (tag != "#bin") throw SchemaError(path.string() + ": expected #bin header");
    BinStream s;
    std::size_t n = 0;
    if (!(in >> s.age_months >> n)) throw SchemaError(path.string() + ": bad #bin header");
    s.ids.resize(n);
    for (auto& id : s.ids) {
      if (!(in >> id)) throw SchemaError(path.string() + ": truncated token stream");
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
        throw SchemaError(path.string() + ": token id out of range");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cdsgen
