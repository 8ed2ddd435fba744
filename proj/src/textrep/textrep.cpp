#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "relevance/textrep.hpp"
#include "relevance/util/hash.hpp"

namespace relevance::textrep {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumFamilies> kFamilyNames = {
    "synthetic_caption", "title", "description", "link", "board_titles", "engaged_query_tokens",
};

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"[PAD]", "[SEP]", "[UNK]", "[FIELD]"};
  return kReserved;
}

void append_tokens(std::vector<std::string>& out, std::string_view text) {
  auto toks = tokenize(text);
  out.insert(out.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
}

}  // namespace

std::string_view family_name(FieldFamily family) {
  return kFamilyNames[static_cast<std::size_t>(family)];
}

FieldFamily family_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    if (kFamilyNames[i] == name) return static_cast<FieldFamily>(i);
  }
  throw ValidationError("unknown field family '" + std::string(name) + "'");
}

// --- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("vocabulary token '" + tokens_[i] + "' appears twice");
    }
  }
}

Vocabulary Vocabulary::build(const std::unordered_map<std::string, std::size_t>& counts,
                             std::size_t min_freq) {
  std::vector<std::string> corpus_tokens;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq && !tok.empty()) corpus_tokens.push_back(tok);
  }
  std::sort(corpus_tokens.begin(), corpus_tokens.end());
  std::vector<std::string> tokens = reserved_tokens();
  for (auto& t : corpus_tokens) {
    // Tokenizer output never contains '[' so reserved names cannot collide.
    if (std::find(tokens.begin(), tokens.begin() + kNumReserved, t) == tokens.begin() + kNumReserved) {
      tokens.push_back(std::move(t));
    }
  }
  return Vocabulary(std::move(tokens));
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  auto out = corpus::open_output(path);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << json{{"token", tokens_[i]}, {"id", i}}.dump() << '\n';
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto in = corpus::open_input(path);
  std::vector<std::string> tokens;
  corpus::for_each_jsonl(in, [&](const json& j, std::size_t) {
    if (!j.is_object() || !j.contains("token") || !j.contains("id")) {
      throw ParseError("vocabulary line needs 'token' and 'id'");
    }
    const auto id = j.at("id").get<std::size_t>();
    if (id != tokens.size()) throw ParseError("vocabulary ids must be dense and ordered");
    tokens.push_back(j.at("token").get<std::string>());
  });
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw ParseError("vocabulary file does not start with the reserved tokens");
  }
  return Vocabulary(std::move(tokens));
}

// --- config -----------------------------------------------------------------

void TextRepConfig::validate() const {
  if (max_len < 8) throw ValidationError("text max_len must be at least 8");
  std::unordered_set<int> seen;
  for (auto f : field_order) {
    if (!seen.insert(static_cast<int>(f)).second) {
      throw ValidationError("field family '" + std::string(family_name(f)) + "' listed twice");
    }
  }
}

json to_json(const TextRepConfig& config) {
  json order = json::array();
  for (auto f : config.field_order) order.push_back(family_name(f));
  return json{{"max_len", config.max_len},
              {"field_order", order},
              {"include_field_delimiters", config.include_field_delimiters}};
}

TextRepConfig text_config_from_json(const json& j) {
  TextRepConfig c;
  if (j.contains("max_len")) c.max_len = j.at("max_len").get<std::size_t>();
  if (j.contains("field_order")) {
    c.field_order.clear();
    for (const auto& name : j.at("field_order")) {
      c.field_order.push_back(family_from_name(name.get<std::string>()));
    }
  }
  if (j.contains("include_field_delimiters")) {
    c.include_field_delimiters = j.at("include_field_delimiters").get<bool>();
  }
  c.validate();
  return c;
}

// --- assembly ---------------------------------------------------------------

corpus::PinDocument impute_title_description(corpus::PinDocument pin) {
  if (pin.title.empty()) pin.title = pin.link_title;
  if (pin.description.empty()) pin.description = pin.link_description;
  return pin;
}

std::vector<std::string> unique_board_titles(const corpus::PinDocument& pin) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& b : pin.board_titles) {
    if (seen.insert(b).second) out.push_back(b);
  }
  return out;
}

std::vector<std::string> family_tokens(const corpus::PinDocument& pin, FieldFamily family) {
  std::vector<std::string> out;
  switch (family) {
    case FieldFamily::kCaption:
      append_tokens(out, pin.synthetic_caption);
      break;
    case FieldFamily::kTitle:
      append_tokens(out, pin.title);
      break;
    case FieldFamily::kDescription:
      append_tokens(out, pin.description);
      break;
    case FieldFamily::kLink:
      append_tokens(out, pin.link_title);
      append_tokens(out, pin.link_description);
      break;
    case FieldFamily::kBoards:
      for (const auto& b : unique_board_titles(pin)) append_tokens(out, b);
      break;
    case FieldFamily::kEngagedQueries: {
      std::unordered_set<std::string> seen;
      for (const auto& q : pin.engaged_query_tokens) {
        for (auto& t : tokenize(q)) {
          if (seen.insert(t).second) out.push_back(std::move(t));
        }
      }
      break;
    }
  }
  return out;
}

std::vector<TokenId> assemble_pin_text(const corpus::PinDocument& pin, const Vocabulary& vocab,
                                       const TextRepConfig& config) {
  std::vector<TokenId> out;
  const bool delimit = config.include_field_delimiters;
  for (auto family : config.field_order) {
    std::vector<TokenId> part;
    if (family == FieldFamily::kBoards) {
      for (const auto& board : unique_board_titles(pin)) {
        auto ids = vocab.encode(tokenize(board));
        if (ids.empty()) continue;
        if (delimit && !part.empty()) part.push_back(kField);
        part.insert(part.end(), ids.begin(), ids.end());
      }
    } else {
      part = vocab.encode(family_tokens(pin, family));
    }
    if (part.empty()) continue;
    if (delimit && !out.empty()) out.push_back(kField);
    out.insert(out.end(), part.begin(), part.end());
    if (out.size() >= config.max_len) break;
  }
  if (out.size() > config.max_len) out.resize(config.max_len);
  return out;
}

TokenSeq build_crossencoder_input(std::span<const TokenId> query_tokens,
                                  std::span<const TokenId> pin_tokens, std::size_t max_len) {
  if (query_tokens.size() + 1 > max_len) {
    std::ostringstream msg;
    msg << "query of " << query_tokens.size() << " tokens plus SEP exceeds max_len " << max_len;
    throw ValidationError(msg.str());
  }
  const std::size_t pin_budget = std::min(pin_tokens.size(), max_len - query_tokens.size() - 1);
  TokenSeq seq;
  seq.tokens.reserve(query_tokens.size() + 1 + pin_budget);
  seq.tokens.assign(query_tokens.begin(), query_tokens.end());
  seq.tokens.push_back(kSep);
  seq.tokens.insert(seq.tokens.end(), pin_tokens.begin(),
                    pin_tokens.begin() + static_cast<std::ptrdiff_t>(pin_budget));
  seq.segment_ids.assign(query_tokens.size() + 1, 0);
  seq.segment_ids.resize(seq.tokens.size(), 1);
  return seq;
}

}  // namespace relevance::textrep
