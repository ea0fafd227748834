#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cdsgen {

using WordId = std::uint32_t;

// Maps word strings to dense ids.
class WordInterner {
 public:
  WordId intern(std::string_view w);
  std::optional<WordId> find(std::string_view w) const;
  std::size_t size() const { return ids_.size(); }

 private:
  std::unordered_map<std::string, WordId> ids_;
};

// Generalized suffix automaton over word-id sequences. Each utterance is
// inserted from the root, so no match can span two utterances.
class SuffixAutomaton {
 public:
  SuffixAutomaton();

  void add_sequence(std::span<const WordId> words);
  // Must be called after the last add_sequence before occurrences().
  void finalize();

  bool contains(std::span<const WordId> query) const;
  // Number of (utterance, position) occurrences of `query` as a contiguous
  // subsequence.
  std::uint64_t occurrences(std::span<const WordId> query) const;
  std::size_t state_count() const { return states_.size(); }

 private:
  struct Edge {
    WordId word;
    std::uint32_t target;
  };
  struct State {
    std::uint32_t len = 0;
    std::int32_t link = -1;
    std::uint64_t count = 0;
    std::vector<Edge> edges;  // sorted by word
  };

  std::optional<std::uint32_t> next(std::uint32_t state, WordId w) const;
  void set_next(std::uint32_t state, WordId w, std::uint32_t target);
  std::uint32_t extend(std::uint32_t last, WordId w);
  std::optional<std::uint32_t> walk(std::span<const WordId> query) const;

  std::vector<State> states_;
  bool finalized_ = false;
};

// Contiguous word-sequence membership over a training corpus.
class NoveltyIndex {
 public:
  explicit NoveltyIndex(const std::vector<std::vector<std::string>>& utterances);

  bool contains(std::span<const std::string> words) const;
  std::uint64_t occurrences(std::span<const std::string> words) const;
  std::size_t utterance_count() const { return utterances_; }

 private:
  std::optional<std::vector<WordId>> lookup(std::span<const std::string> words) const;

  WordInterner interner_;
  SuffixAutomaton automaton_;
  std::size_t utterances_ = 0;
};

enum class NoveltyMode {
  External,    // novel iff never contained in the index
  LeaveOneOut, // for utterances of the indexed corpus: novel iff it occurs only once
};

bool is_novel(const NoveltyIndex& index, std::span<const std::string> words, NoveltyMode mode);

struct NoveltyBucket {
  std::size_t length = 0;     // words per utterance
  double proportion = 0.0;    // mean over groups of the per-group novel proportion
  double sd = 0.0;            // SD of the per-group proportions (n - 1), 0 for one group
  std::size_t n = 0;          // utterances of this length over all groups
  std::size_t novel = 0;
  std::size_t groups = 0;     // groups with at least one utterance of this length
};

using NoveltyProfile = std::vector<NoveltyBucket>;

// `groups` are per-age-bin utterance word lists.
NoveltyProfile novelty_profile(const std::vector<std::vector<std::vector<std::string>>>& groups,
                               const NoveltyIndex& index, NoveltyMode mode);

}  // namespace cdsgen
