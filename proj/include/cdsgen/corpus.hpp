#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdsgen {

enum class SpeakerRole { Mother, Father, Other };

struct RawRecord {
  std::string text;
  SpeakerRole speaker_role = SpeakerRole::Other;
  std::optional<double> child_age_months;
  std::string corpus_id;
  std::string transcript_id;
  std::size_t line = 0;  // 1-based source line
};

struct Rejection {
  std::size_t line = 0;
  std::string reason;
};

enum class RecordFormat { DelimitedTable, LineJson };
enum class AgeUnit { Months, Days };

struct LoadOptions {
  RecordFormat format = RecordFormat::DelimitedTable;
  char delimiter = '\t';
  AgeUnit age_unit = AgeUnit::Months;
  // Export speaker code -> role. Codes not listed map to Other.
  std::map<std::string, SpeakerRole> role_codes = {
      {"MOT", SpeakerRole::Mother}, {"FAT", SpeakerRole::Father},
      {"Mother", SpeakerRole::Mother}, {"Father", SpeakerRole::Father},
      {"mother", SpeakerRole::Mother}, {"father", SpeakerRole::Father}};
};

struct LoadResult {
  std::vector<RawRecord> records;
  std::vector<Rejection> rejected;
};

inline constexpr double kDaysPerMonth = 30.4375;

// Reads an age-annotated transcript export. Required columns / fields:
// gloss, speaker_role, target_child_age, corpus_name, transcript_id.
LoadResult load_records(const std::filesystem::path& path, const LoadOptions& options = {});
LoadResult parse_records(std::string_view content, const LoadOptions& options = {});

struct Utterance {
  std::vector<std::string> words;
  double source_age_months = 0.0;
  std::string corpus_id;

  bool operator==(const Utterance&) const = default;
};

struct NormalizeOptions {
  std::vector<std::string> incomprehensible_markers = {"xxx", "yyy", "www"};
};

struct FilterCounts {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t wrong_role = 0;
  std::size_t missing_age = 0;
  std::size_t marker = 0;
  std::size_t empty_after_normalization = 0;
};

struct FilterResult {
  std::vector<Utterance> utterances;
  FilterCounts counts;
};

// Lowercases a raw transcript string and splits it into words. Punctuation is
// removed except for apostrophes, underscores and word-internal hyphens.
std::vector<std::string> normalize_words(std::string_view text);

FilterResult filter_and_normalize(const std::vector<RawRecord>& records,
                                  const NormalizeOptions& options = {});

// "go ahead ." form used by every corpus file.
std::string serialize(const Utterance& u);
std::string serialize_words(const std::vector<std::string>& words);

inline constexpr int kFirstBinCenter = 3;
inline constexpr int kLastBinCenter = 84;
inline constexpr int kBinWidth = 3;
inline constexpr int kValidationBinCenter = 57;

// Bin center for an age under the half-open rule [c - 1.5, c + 1.5), or
// nullopt when the age falls outside [1.5, 85.5).
std::optional<int> age_bin_center(double age_months);

struct AgeBin {
  int center_months = 0;
  std::vector<Utterance> utterances;
};

struct BinningResult {
  std::vector<AgeBin> bins;  // non-empty bins, ascending center
  std::size_t dropped = 0;
};

BinningResult bin_by_age(const std::vector<Utterance>& utterances);

struct CorpusSplit {
  std::vector<AgeBin> train_bins;
  AgeBin validation_bin;
};

// Throws ConfigError when the validation bin is absent.
CorpusSplit split_train_validation(std::vector<AgeBin> bins,
                                   int validation_center = kValidationBinCenter);

std::size_t word_count(const std::vector<Utterance>& utterances);

// One utterance per line plus a sidecar index (first_line, line_count,
// age_bin, corpus_id) with 0-based line numbers. Consecutive utterances of the
// same bin and corpus share one index row.
void write_normalized_corpus(const std::filesystem::path& text_path,
                             const std::filesystem::path& index_path,
                             const std::vector<AgeBin>& bins);

// Utterances read back carry the bin center as their age.
std::vector<AgeBin> read_normalized_corpus(const std::filesystem::path& text_path,
                                           const std::filesystem::path& index_path);

std::filesystem::path index_path_for(const std::filesystem::path& text_path);

}  // namespace cdsgen
