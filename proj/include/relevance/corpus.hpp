#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "relevance/util/error.hpp"

namespace relevance::corpus {

inline constexpr int kNumLevels = 5;

/// A content item with its text fields, optional embedding and attributes.
struct PinDocument {
  std::string pin_id;
  std::string title;
  std::string description;
  std::string link_title;
  std::string link_description;
  std::string synthetic_caption;
  std::vector<std::string> board_titles;
  std::vector<std::string> engaged_query_tokens;
  std::optional<std::vector<double>> pin_embedding;
  std::map<std::string, std::string> categorical_attrs;
  // query_id -> fraction of impressions that led to a repin or long click
  std::map<std::string, double> engagement_rate;

  bool operator==(const PinDocument&) const = default;
};

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::optional<std::vector<double>> query_embedding;

  bool operator==(const QueryRecord&) const = default;
};

struct RaterAnnotation {
  std::string query_id;
  std::string pin_id;
  std::vector<int> ratings;
};

struct EngagementRecord {
  std::string query_id;
  std::string pin_id;
  std::int64_t repins = 0;
  std::int64_t long_clicks = 0;
  std::int64_t impressions = 0;
};

/// Probability distribution over relevance levels L1..L5 (index 0 is L1).
class SoftLabel {
 public:
  /// Uniform distribution.
  SoftLabel();

  /// Validates non-negativity and unit mass (tolerance 1e-9).
  explicit SoftLabel(const std::array<double, kNumLevels>& probs);

  static SoftLabel one_hot(int level);

  const std::array<double, kNumLevels>& probs() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }

  /// Most probable level in 1..5; ties go to the lowest level.
  int argmax_level() const;

  /// Expected mapped gain: sum_c p_c * 0.25 * (c - 1).
  double expected_gain() const;

  bool operator==(const SoftLabel&) const = default;

 private:
  std::array<double, kNumLevels> probs_;
};

enum class LabelSource { kHuman, kTeacher };

struct LabeledExample {
  std::string query_id;
  std::string pin_id;
  SoftLabel label;
  LabelSource source = LabelSource::kHuman;

  bool operator==(const LabeledExample&) const = default;
};

/// Immutable id-indexed collection. Construction rejects duplicate ids.
template <typename Record>
class RecordStore {
 public:
  RecordStore() = default;
  explicit RecordStore(std::vector<Record> records);

  const Record* find(std::string_view id) const;
  const Record& at(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  std::span<const Record> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

using PinStore = RecordStore<PinDocument>;
using QueryStore = RecordStore<QueryRecord>;
using EmbeddingStore = std::unordered_map<std::string, std::vector<double>>;

// --- JSON mapping ---------------------------------------------------------

PinDocument pin_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PinDocument& pin);
QueryRecord query_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QueryRecord& query);
RaterAnnotation annotation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RaterAnnotation& ann);
EngagementRecord engagement_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EngagementRecord& rec);
LabeledExample example_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LabeledExample& ex);
nlohmann::json to_json(const SoftLabel& label);
SoftLabel soft_label_from_json(const nlohmann::json& j);

// --- JSONL ingestion --------------------------------------------------------

/// Calls `fn(record, line_number)` for every non-blank line. Malformed JSON
/// raises ParseError naming the 1-based line number.
void for_each_jsonl(std::istream& in,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

std::vector<PinDocument> read_pins(std::istream& in);
std::vector<PinDocument> load_pins(const std::filesystem::path& path);
std::vector<QueryRecord> read_queries(std::istream& in);
std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
std::vector<RaterAnnotation> load_annotations(const std::filesystem::path& path);
std::vector<EngagementRecord> load_engagement_log(const std::filesystem::path& path);
std::vector<LabeledExample> load_examples(const std::filesystem::path& path);

EmbeddingStore read_embedding_store(std::istream& in, std::size_t expected_dim);
EmbeddingStore load_embedding_store(const std::filesystem::path& path,
                                    std::size_t expected_dim);

/// Opens `path` for writing (creating parent directories) or throws.
std::ofstream open_output(const std::filesystem::path& path);
std::ifstream open_input(const std::filesystem::path& path);

/// Writes one JSON object per line, in the given order.
template <typename Record>
void write_jsonl(const std::filesystem::path& path, std::span<const Record> records) {
  std::ofstream out = open_output(path);
  for (const auto& record : records) out << to_json(record).dump() << '\n';
}
void write_embedding_store(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, std::vector<double>>>& rows);

// --- label aggregation and splitting ----------------------------------------

/// Mean of the one-hot vectors of the ratings. Any number of raters >= 1.
SoftLabel aggregate_soft_label(const RaterAnnotation& ann);

/// Fills `engagement_rate` of each pin from the log:
/// (repins + long_clicks) / impressions, clamped to [0, 1]; 0 impressions -> 0.
void apply_engagement(std::span<const EngagementRecord> log, std::vector<PinDocument>& pins);

/// Deterministic bucket of a query in [0, 1):
///   unit_interval(mix64(fnv1a64(decimal(seed) + ":" + query_id)))
/// where unit_interval takes the top 53 bits.
double query_bucket(std::string_view query_id, std::uint64_t seed);

/// True iff the query falls on the test side for this fraction and seed.
bool is_test_query(std::string_view query_id, double test_fraction, std::uint64_t seed);

struct Split {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

/// Partitions by query: a query's examples all land on the same side.
Split split_by_query(std::span<const LabeledExample> examples, double test_fraction,
                     std::uint64_t seed);

}  // namespace relevance::corpus
