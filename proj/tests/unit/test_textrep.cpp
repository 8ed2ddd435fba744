#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "relevance/textrep.hpp"
#include "test_support.hpp"

using namespace relevance;
using namespace relevance::textrep;
using Strings = std::vector<std::string>;

namespace {

Vocabulary vocab_of(const Strings& words) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& w : words) ++counts[w];
  return Vocabulary::build(counts);
}

std::vector<TokenId> ids(const Vocabulary& v, std::string_view text) {
  return v.encode(tokenize(text));
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("Red DRESS!") == Strings{"red", "dress"});
  CHECK(tokenize("summer-outfit ideas") == Strings{"summer", "outfit", "ideas"});
  CHECK(tokenize("  ...  ").empty());
  CHECK(tokenize("a1 b2") == Strings{"a1", "b2"});
}

TEST_CASE("impute_title_description fills only empty fields") {
  corpus::PinDocument pin;
  pin.link_title = "blue sofa";
  CHECK(impute_title_description(pin).title == "blue sofa");

  pin.title = "red dress";
  pin.link_title = "shop dresses";
  CHECK(impute_title_description(pin).title == "red dress");

  corpus::PinDocument empty;
  const auto out = impute_title_description(empty);
  CHECK(out.title.empty());
  CHECK(out.description.empty());
  CHECK(out.link_title.empty());
  CHECK(out.link_description.empty());

  corpus::PinDocument desc;
  desc.link_description = "long text";
  CHECK(impute_title_description(desc).description == "long text");
}

TEST_CASE("vocabulary reserves special ids and maps unknowns") {
  const auto v = vocab_of({"red", "dress", "red"});
  CHECK(v.size() == kNumReserved + 2);
  CHECK(v.id("red") >= kNumReserved);
  CHECK(v.id("nope") == kUnk);
  CHECK(v.token(v.id("dress")) == "dress");
  CHECK_FALSE(v.find("nope").has_value());
}

TEST_CASE("vocabulary min_freq and save/load round trip") {
  std::unordered_map<std::string, std::size_t> counts{{"a", 3}, {"b", 1}, {"c", 2}};
  const auto v = Vocabulary::build(counts, 2);
  CHECK(v.find("a").has_value());
  CHECK_FALSE(v.find("b").has_value());
  testing::TempDir dir;
  v.save(dir / "vocab.jsonl");
  const auto back = Vocabulary::load(dir / "vocab.jsonl");
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());
  CHECK(Vocabulary::build(counts, 1).fingerprint() != v.fingerprint());
}

TEST_CASE("assemble_pin_text follows the field order with delimiters") {
  const auto v = vocab_of({"a", "red", "dress", "photo"});
  TextRepConfig cfg;
  corpus::PinDocument empty;
  CHECK(assemble_pin_text(empty, v, cfg).empty());

  corpus::PinDocument pin;
  pin.synthetic_caption = "a red dress";
  pin.title = "red dress";
  auto want = ids(v, "a red dress");
  want.push_back(kField);
  for (auto id : ids(v, "red dress")) want.push_back(id);
  CHECK(assemble_pin_text(pin, v, cfg) == want);

  cfg.include_field_delimiters = false;
  want.erase(want.begin() + 3);
  CHECK(assemble_pin_text(pin, v, cfg) == want);
}

TEST_CASE("assemble_pin_text truncates to max_len") {
  const auto v = vocab_of({"a", "red", "dress", "photo"});
  TextRepConfig cfg;
  cfg.max_len = 3;
  corpus::PinDocument pin;
  pin.synthetic_caption = "a red dress photo";
  pin.title = "red";
  CHECK(assemble_pin_text(pin, v, cfg) == ids(v, "a red dress"));
}

TEST_CASE("family order is configurable") {
  const auto v = vocab_of({"cap", "ttl"});
  TextRepConfig cfg;
  cfg.field_order = {FieldFamily::kTitle, FieldFamily::kCaption};
  corpus::PinDocument pin;
  pin.synthetic_caption = "cap";
  pin.title = "ttl";
  CHECK(assemble_pin_text(pin, v, cfg) ==
        std::vector<TokenId>{v.id("ttl"), kField, v.id("cap")});
  cfg.field_order = {FieldFamily::kCaption};
  CHECK(assemble_pin_text(pin, v, cfg) == std::vector<TokenId>{v.id("cap")});
}

TEST_CASE("board titles are deduplicated") {
  corpus::PinDocument pin;
  pin.board_titles = {"Home", "Decor", "Home"};
  CHECK(unique_board_titles(pin) == Strings{"Home", "Decor"});
  CHECK(family_tokens(pin, FieldFamily::kBoards) == Strings{"home", "decor"});
}

TEST_CASE("build_crossencoder_input joins with SEP and truncates the pin tail") {
  const std::vector<TokenId> q{5, 6};
  auto seq = build_crossencoder_input(q, std::vector<TokenId>{9}, 16);
  CHECK(seq.tokens == std::vector<TokenId>{5, 6, kSep, 9});
  CHECK(seq.segment_ids == std::vector<std::uint8_t>{0, 0, 0, 1});

  seq = build_crossencoder_input(q, std::vector<TokenId>{9, 9, 9}, 5);
  CHECK(seq.tokens == std::vector<TokenId>{5, 6, kSep, 9, 9});
  CHECK(seq.segment_ids == std::vector<std::uint8_t>{0, 0, 0, 1, 1});

  const std::vector<TokenId> long_query(20, 7);
  CHECK_THROWS_AS(build_crossencoder_input(long_query, std::vector<TokenId>{}, 16),
                  ValidationError);

  seq = build_crossencoder_input(q, std::vector<TokenId>{}, 16);
  CHECK(seq.tokens == std::vector<TokenId>{5, 6, kSep});
}

TEST_CASE("text config validation and JSON") {
  TextRepConfig cfg;
  cfg.field_order = {FieldFamily::kBoards, FieldFamily::kLink};
  const auto back = text_config_from_json(to_json(cfg));
  CHECK(back.field_order == cfg.field_order);
  CHECK(back.max_len == cfg.max_len);
  cfg.max_len = 2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(family_from_name(family_name(FieldFamily::kEngagedQueries)) == FieldFamily::kEngagedQueries);
}
