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

namespace relevance::textrep {

/// The six Pin text families, in the order they are listed by default.
enum class FieldFamily : std::uint8_t {
  kCaption,
  kTitle,
  kDescription,
  kLink,  // link_title followed by link_description
  kBoards,
  kEngagedQueries,
};

inline constexpr std::size_t kNumFamilies = 6;

/// Default assembly order (caption first; engaged query tokens last).
inline constexpr std::array<FieldFamily, kNumFamilies> kDefaultFieldOrder = {
    FieldFamily::kCaption, FieldFamily::kTitle,  FieldFamily::kDescription,
    FieldFamily::kLink,    FieldFamily::kBoards, FieldFamily::kEngagedQueries,
};

std::string_view family_name(FieldFamily family);
FieldFamily family_from_name(std::string_view name);

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kField = 3;
inline constexpr TokenId kNumReserved = 4;

/// Frozen token -> id map. Ids are dense; 0..3 are reserved
/// (PAD, SEP, UNK, FIELD) and corpus tokens follow in lexicographic order.
class Vocabulary {
 public:
  /// Reserved tokens only.
  Vocabulary();

  /// Every distinct token with count >= min_freq, sorted lexicographically.
  static Vocabulary build(const std::unordered_map<std::string, std::size_t>& counts,
                          std::size_t min_freq = 1);

  /// Id of `token`, or UNK.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;

  /// FNV-1a over the serialized form; identifies a vocabulary in sidecars.
  std::uint64_t fingerprint() const;

  /// JSONL, one {"token", "id"} per line in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct TextRepConfig {
  std::size_t max_len = 64;
  std::vector<FieldFamily> field_order{kDefaultFieldOrder.begin(), kDefaultFieldOrder.end()};
  bool include_field_delimiters = true;

  /// Enforces max_len >= 8 and no repeated families.
  void validate() const;
};

nlohmann::json to_json(const TextRepConfig& config);
TextRepConfig text_config_from_json(const nlohmann::json& j);

/// Joint query/pin sequence for the cross-encoder. Segment 0 is the query
/// side (including SEP), segment 1 the pin side.
struct TokenSeq {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> segment_ids;

  bool operator==(const TokenSeq&) const = default;
};

/// Lowercases, splits on whitespace and punctuation (dropped), and emits
/// CJK ideographs, kana and hangul syllables as single-character tokens.
/// Case folding covers ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic and
/// fullwidth Latin letters.
std::vector<std::string> tokenize(std::string_view text);

/// Fills an empty title from link_title and an empty description from
/// link_description.
corpus::PinDocument impute_title_description(corpus::PinDocument pin);

/// Board titles with repeats removed, first occurrence kept.
std::vector<std::string> unique_board_titles(const corpus::PinDocument& pin);

/// Tokens of one family. Boards are deduplicated by title; engaged query
/// tokens contribute each distinct token once.
std::vector<std::string> family_tokens(const corpus::PinDocument& pin, FieldFamily family);

/// Pin side of the cross-encoder input: families in config order, FIELD
/// between non-empty families (and between board titles) when enabled,
/// truncated from the tail to config.max_len.
std::vector<TokenId> assemble_pin_text(const corpus::PinDocument& pin, const Vocabulary& vocab,
                                       const TextRepConfig& config);

/// query ++ [SEP] ++ pin, cutting only the pin tail to fit `max_len`.
/// Throws ValidationError when query plus SEP alone exceed max_len.
TokenSeq build_crossencoder_input(std::span<const TokenId> query_tokens,
                                  std::span<const TokenId> pin_tokens, std::size_t max_len);

}  // namespace relevance::textrep
