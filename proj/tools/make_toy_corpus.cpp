// Writes the bundled synthetic transcript export. Caregiver utterances get
// longer and less interjection-heavy with the child's age; the file also
// contains child speech, unintelligible markers, missing ages and ages past
// the last bin so every filter has something to do.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

#include "cdsgen/rng.hpp"
#include "toy_lexicon.hpp"

namespace {

using cdsgen::Rng;
using Words = std::vector<std::string>;

const std::string& pick(const Words& w, Rng& rng) { return w[rng.below(w.size())]; }

class Builder {
 public:
  explicit Builder(Rng& rng) : rng_(rng) {
    for (const char* tag : {"PRON", "VERB", "NOUN", "ADJ", "INTJ", "DET", "ADP", "ADV"}) {
      pools_[tag] = toy::words_with(tag);
    }
    base_verbs_ = {"want", "see", "like", "need", "find", "get", "make", "read", "eat"};
    subjects_ = {"you", "i", "we", "they"};
  }

  Words noun_phrase(bool allow_adj) {
    Words np;
    if (rng_.uniform() < 0.8) np.push_back(pick(pools_["DET"], rng_));
    if (allow_adj && rng_.uniform() < 0.4) np.push_back(pick(pools_["ADJ"], rng_));
    np.push_back(pick(pools_["NOUN"], rng_));
    return np;
  }

  Words clause() {
    Words c;
    switch (rng_.below(5)) {
      case 0:
        c = {"do", "you", pick(base_verbs_, rng_)};
        break;
      case 1:
        c = {"look", "at"};
        break;
      case 2:
        c = {pick(subjects_, rng_), pick(base_verbs_, rng_)};
        break;
      case 3:
        c = {"where", "is"};
        break;
      default:
        c = {"can", "you", pick(base_verbs_, rng_)};
        break;
    }
    auto np = noun_phrase(true);
    c.insert(c.end(), np.begin(), np.end());
    return c;
  }

  Words utterance(double age, std::size_t target) {
    Words u;
    const double intj = std::max(0.05, 0.55 - 0.6 * age / 84.0);
    if (target <= 1) {
      return {rng_.uniform() < intj * 1.5 ? pick(pools_["INTJ"], rng_) : pick(pools_["NOUN"], rng_)};
    }
    if (rng_.uniform() < intj) u.push_back(pick(pools_["INTJ"], rng_));
    if (target <= 2 + u.size()) {
      auto np = noun_phrase(false);
      u.insert(u.end(), np.begin(), np.end());
      return u;
    }
    auto c = clause();
    u.insert(u.end(), c.begin(), c.end());
    while (u.size() < target) {
      switch (rng_.below(4)) {
        case 0: {
          u.push_back(pick(pools_["ADP"], rng_));
          auto np = noun_phrase(true);
          u.insert(u.end(), np.begin(), np.end());
          break;
        }
        case 1:
          u.push_back(pick(pools_["ADV"], rng_));
          break;
        default: {
          u.push_back(rng_.uniform() < 0.8 ? "and" : "but");
          auto more = clause();
          u.insert(u.end(), more.begin(), more.end());
          break;
        }
      }
    }
    return u;
  }

 private:
  Rng& rng_;
  std::map<std::string, Words> pools_;
  Words base_verbs_, subjects_;
};

std::string render(const Words& words, Rng& rng) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += (i == 2 && words.size() > 5 && rng.uniform() < 0.2) ? ", " : " ";
    s += words[i];
  }
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  const double r = rng.uniform();
  s += r < 0.6 ? "." : r < 0.85 ? "?" : "!";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic toy transcript export"};
  std::string out_path = "raw.tsv";
  std::uint64_t seed = 2024;
  std::size_t transcripts = 168;
  app.add_option("output", out_path, "Output TSV path")->capture_default_str();
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--transcripts", transcripts, "Number of transcripts")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  Rng rng(seed);
  Builder builder(rng);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot write " << out_path << '\n';
    return 1;
  }
  out << "transcript_id\tcorpus_name\tspeaker_role\ttarget_child_age\tgloss\n";
  const char* corpora[] = {"ToyA", "ToyB", "ToyC"};
  std::size_t rows = 0;
  for (std::size_t t = 0; t < transcripts; ++t) {
    // Round-robin over the 28 bin centers so every bin is populated; a few
    // transcripts fall past the last bin.
    double age = 3.0 + 3.0 * static_cast<double>(t % 28) + (rng.uniform() * 2.8 - 1.4);
    if (t % 41 == 40) age = 86.0 + rng.uniform() * 6.0;
    const bool day_missing = t % 37 == 36;
    const std::string corpus = corpora[t % 3];
    const std::string id = corpus + "-" + std::to_string(t);
    const std::size_t n = 40 + rng.below(31);
    const double mean_len = 1.6 + 6.4 * std::clamp((age - 3.0) / 45.0, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rng.uniform();
      const char* role = r < 0.6 ? "MOT" : r < 0.85 ? "FAT" : "CHI";
      const auto target = static_cast<std::size_t>(
          std::clamp(std::lround(mean_len + 1.3 * rng.normal()), 1L, 18L));
      auto words = builder.utterance(age, target);
      if (rng.uniform() < 0.02) words.insert(words.begin() + static_cast<long>(rng.below(words.size())), "xxx");
      std::string gloss = render(words, rng);
      char age_buf[32];
      std::snprintf(age_buf, sizeof age_buf, "%.2f", age);
      const bool missing = day_missing || rng.uniform() < 0.01;
      out << id << '\t' << corpus << '\t' << role << '\t' << (missing ? "NA" : age_buf) << '\t'
          << gloss << '\n';
      ++rows;
    }
  }
  std::cerr << "wrote " << rows << " rows to " << out_path << '\n';
  return 0;
}
