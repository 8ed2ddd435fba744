#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/textrep.hpp"

namespace relevance::features {

using textrep::FieldFamily;
using textrep::kNumFamilies;

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  bool operator==(const Bm25Params&) const = default;
};

/// Per-family document frequencies and average lengths over a pin corpus.
/// Field text is taken from the imputed pin via textrep::family_tokens.
class Bm25Index {
 public:
  struct FieldStats {
    std::unordered_map<std::string, std::size_t> df;
    double avgdl = 0.0;

    bool operator==(const FieldStats&) const = default;
  };

  Bm25Index() = default;

  /// Throws ValidationError on an empty corpus.
  static Bm25Index build(std::span<const corpus::PinDocument> pins, Bm25Params params = {});

  std::size_t num_docs() const { return num_docs_; }
  const Bm25Params& params() const { return params_; }
  const FieldStats& field(FieldFamily family) const {
    return fields_[static_cast<std::size_t>(family)];
  }
  std::size_t df(FieldFamily family, std::string_view token) const;
  double avgdl(FieldFamily family) const { return field(family).avgdl; }

  /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
  double idf(FieldFamily family, std::string_view token) const;

  /// {"version", "params": {k1, b}, "num_docs", "fields": {name: {avgdl, df}}}
  nlohmann::json to_json() const;
  static Bm25Index from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Bm25Index load(const std::filesystem::path& path);

  bool operator==(const Bm25Index&) const = default;

 private:
  std::size_t num_docs_ = 0;
  Bm25Params params_;
  std::array<FieldStats, kNumFamilies> fields_;
};

/// Okapi BM25 of `doc_field_tokens` for the unique tokens of `query_tokens`.
/// Returns 0 for a field whose average length is 0.
double bm25_score(const Bm25Index& index, FieldFamily family,
                  std::span<const std::string> query_tokens,
                  std::span<const std::string> doc_field_tokens);

/// |unique(query) & unique(field)| / |unique(query)|; 0 for an empty query.
double overlap_fraction(std::span<const std::string> query_tokens,
                        std::span<const std::string> field_tokens);

/// Learned linear lift of one scalar: out = x * w + v.
struct NumericalEmbedConfig {
  std::vector<double> w;
  std::vector<double> v;
};

std::vector<double> numerical_embed(double x, const NumericalEmbedConfig& cfg);

// --- feature vector ---------------------------------------------------------

/// One categorical attribute and its known values. Value i maps to id i + 1;
/// id 0 is reserved for values not seen when the layout was built.
struct CategoricalSpec {
  std::string name;
  std::vector<std::string> values;

  std::int32_t id_of(std::string_view value) const;
  std::size_t table_rows() const { return values.size() + 1; }

  bool operator==(const CategoricalSpec&) const = default;
};

/// Dimensions and categorical vocabularies shared by feature assembly and
/// the student's input layer.
struct FeatureLayout {
  std::size_t query_dim = 0;
  std::size_t pin_dim = 0;
  std::vector<CategoricalSpec> categoricals;

  /// Attribute names and values sorted; embedding dims from the first record
  /// that has one (0 when none do).
  static FeatureLayout from_corpus(std::span<const corpus::PinDocument> pins,
                                   std::span<const corpus::QueryRecord> queries);

  std::uint64_t fingerprint() const;

  bool operator==(const FeatureLayout&) const = default;
};

nlohmann::json to_json(const FeatureLayout& layout);
FeatureLayout layout_from_json(const nlohmann::json& j);

// Scalar order: bm25 for the six families, overlap for the six families,
// then engagement rate.
inline constexpr std::size_t kNumScalars = 2 * kNumFamilies + 1;

// Flag order: query embedding, pin embedding, engagement rate.
inline constexpr std::size_t kNumFlags = 3;

struct StudentFeatureVector {
  std::vector<double> query_embedding;
  std::vector<double> pin_embedding;
  std::array<double, kNumFamilies> bm25{};
  std::array<double, kNumFamilies> overlap{};
  double engagement_rate = 0.0;
  std::array<std::uint8_t, kNumFlags> flags{};
  std::vector<std::int32_t> categorical_ids;
  std::uint64_t layout_fingerprint = 0;

  std::array<double, kNumScalars> scalars() const;

  bool operator==(const StudentFeatureVector&) const = default;
};

/// Tokenized text of an imputed pin, one entry per family. Building this once
/// per pin keeps repeated scoring cheap.
struct PinTokens {
  std::array<std::vector<std::string>, kNumFamilies> families;

  static PinTokens of(const corpus::PinDocument& pin);
};

/// Everything a (query, pin) feature vector depends on. Missing embeddings,
/// or embeddings whose dimension differs from the layout, become zero vectors
/// with flag 0. Engagement rate is pin.engagement_rate[query_id] when present.
StudentFeatureVector assemble_features(const corpus::QueryRecord& query,
                                       const corpus::PinDocument& pin, const Bm25Index& index,
                                       const FeatureLayout& layout);

StudentFeatureVector assemble_features(const corpus::QueryRecord& query,
                                       std::span<const std::string> query_tokens,
                                       const corpus::PinDocument& pin,
                                       const PinTokens& pin_tokens, const Bm25Index& index,
                                       const FeatureLayout& layout);

}  // namespace relevance::features
