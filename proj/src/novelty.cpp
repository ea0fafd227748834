#include "cdsgen/novelty.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cdsgen {

WordId WordInterner::intern(std::string_view w) {
  auto [it, inserted] = ids_.emplace(std::string(w), static_cast<WordId>(ids_.size()));
  return it->second;
}

std::optional<WordId> WordInterner::find(std::string_view w) const {
  auto it = ids_.find(std::string(w));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

SuffixAutomaton::SuffixAutomaton() { states_.emplace_back(); }

std::optional<std::uint32_t> SuffixAutomaton::next(std::uint32_t state, WordId w) const {
  const auto& e = states_[state].edges;
  auto it = std::lower_bound(e.begin(), e.end(), w,
                             [](const Edge& a, WordId b) { return a.word < b; });
  if (it == e.end() || it->word != w) return std::nullopt;
  return it->target;
}

void SuffixAutomaton::set_next(std::uint32_t state, WordId w, std::uint32_t target) {
  auto& e = states_[state].edges;
  auto it = std::lower_bound(e.begin(), e.end(), w,
                             [](const Edge& a, WordId b) { return a.word < b; });
  if (it != e.end() && it->word == w) {
    it->target = target;
  } else {
    e.insert(it, Edge{w, target});
  }
}

std::uint32_t SuffixAutomaton::extend(std::uint32_t last, WordId w) {
  auto clone_of = [&](std::uint32_t q, std::uint32_t len) {
    const auto clone = static_cast<std::uint32_t>(states_.size());
    State c;
    c.len = len;
    c.link = states_[q].link;
    c.edges = states_[q].edges;
    states_.push_back(std::move(c));
    states_[q].link = static_cast<std::int32_t>(clone);
    return clone;
  };

  if (auto q = next(last, w)) {
    // The extension already exists from another utterance.
    if (states_[last].len + 1 == states_[*q].len) return *q;
    const auto clone = clone_of(*q, states_[last].len + 1);
    for (std::int32_t p = static_cast<std::int32_t>(last);
         p != -1 && next(static_cast<std::uint32_t>(p), w) == *q; p = states_[p].link) {
      set_next(static_cast<std::uint32_t>(p), w, clone);
    }
    return clone;
  }

  const auto cur = static_cast<std::uint32_t>(states_.size());
  states_.emplace_back();
  states_[cur].len = states_[last].len + 1;
  std::int32_t p = static_cast<std::int32_t>(last);
  while (p != -1 && !next(static_cast<std::uint32_t>(p), w)) {
    set_next(static_cast<std::uint32_t>(p), w, cur);
    p = states_[p].link;
  }
  if (p == -1) {
    states_[cur].link = 0;
    return cur;
  }
  const auto q = *next(static_cast<std::uint32_t>(p), w);
  if (states_[p].len + 1 == states_[q].len) {
    states_[cur].link = static_cast<std::int32_t>(q);
    return cur;
  }
  const auto clone = clone_of(q, states_[p].len + 1);
  states_[cur].link = static_cast<std::int32_t>(clone);
  for (; p != -1 && next(static_cast<std::uint32_t>(p), w) == q; p = states_[p].link) {
    set_next(static_cast<std::uint32_t>(p), w, clone);
  }
  return cur;
}

void SuffixAutomaton::add_sequence(std::span<const WordId> words) {
  finalized_ = false;
  std::uint32_t last = 0;
  for (WordId w : words) {
    last = extend(last, w);
    ++states_[last].count;
  }
}

void SuffixAutomaton::finalize() {
  if (finalized_) return;
  // Each state's count becomes its end-position count: propagate along
  // suffix links from longest to shortest.
  std::vector<std::uint32_t> order(states_.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return states_[a].len > states_[b].len; });
  for (auto s : order) {
    if (states_[s].link >= 0) states_[states_[s].link].count += states_[s].count;
  }
  finalized_ = true;
}

std::optional<std::uint32_t> SuffixAutomaton::walk(std::span<const WordId> query) const {
  std::uint32_t s = 0;
  for (WordId w : query) {
    auto n = next(s, w);
    if (!n) return std::nullopt;
    s = *n;
  }
  return s;
}

bool SuffixAutomaton::contains(std::span<const WordId> query) const {
  return walk(query).has_value();
}

std::uint64_t SuffixAutomaton::occurrences(std::span<const WordId> query) const {
  if (!finalized_) return 0;
  auto s = walk(query);
  if (!s) return 0;
  return *s == 0 ? 0 : states_[*s].count;
}

NoveltyIndex::NoveltyIndex(const std::vector<std::vector<std::string>>& utterances) {
  std::vector<WordId> ids;
  for (const auto& u : utterances) {
    ids.clear();
    for (const auto& w : u) ids.push_back(interner_.intern(w));
    automaton_.add_sequence(ids);
    ++utterances_;
  }
  automaton_.finalize();
}

std::optional<std::vector<WordId>> NoveltyIndex::lookup(std::span<const std::string> words) const {
  std::vector<WordId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto id = interner_.find(w);
    if (!id) return std::nullopt;
    ids.push_back(*id);
  }
  return ids;
}

bool NoveltyIndex::contains(std::span<const std::string> words) const {
  auto ids = lookup(words);
  return ids && automaton_.contains(*ids);
}

std::uint64_t NoveltyIndex::occurrences(std::span<const std::string> words) const {
  auto ids = lookup(words);
  return ids ? automaton_.occurrences(*ids) : 0;
}

bool is_novel(const NoveltyIndex& index, std::span<const std::string> words, NoveltyMode mode) {
  if (mode == NoveltyMode::External) return !index.contains(words);
  return index.occurrences(words) <= 1;
}

NoveltyProfile novelty_profile(const std::vector<std::vector<std::vector<std::string>>>& groups,
                               const NoveltyIndex& index, NoveltyMode mode) {
  // length -> per-group (novel, total)
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> tallies;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& u : groups[g]) {
      if (u.empty()) continue;
      auto& per_group = tallies[u.size()];
      per_group.resize(groups.size());
      per_group[g].second += 1;
      if (is_novel(index, u, mode)) per_group[g].first += 1;
    }
  }
  NoveltyProfile profile;
  for (const auto& [len, per_group] : tallies) {
    NoveltyBucket b;
    b.length = len;
    std::vector<double> props;
    for (const auto& [novel, total] : per_group) {
      if (total == 0) continue;
      b.n += total;
      b.novel += novel;
      props.push_back(static_cast<double>(novel) / static_cast<double>(total));
    }
    b.groups = props.size();
    double mean = 0.0;
    for (double p : props) mean += p;
    mean /= static_cast<double>(props.size());
    double ss = 0.0;
    for (double p : props) ss += (p - mean) * (p - mean);
    b.proportion = mean;
    b.sd = props.size() > 1 ? std::sqrt(ss / static_cast<double>(props.size() - 1)) : 0.0;
    profile.push_back(b);
  }
  return profile;
}

}  // namespace cdsgen
