#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <sstream>

#include "relevance/corpus.hpp"
#include "test_support.hpp"

using namespace relevance;
using namespace relevance::corpus;
using relevance::testing::TempDir;

namespace {

std::vector<LabeledExample> examples_over(int n_queries, int per_query) {
  std::vector<LabeledExample> out;
  for (int q = 0; q < n_queries; ++q) {
    for (int p = 0; p < per_query; ++p) {
      out.push_back({"q" + std::to_string(q), "p" + std::to_string(p), SoftLabel::one_hot(1 + p % 5),
                     LabelSource::kHuman});
    }
  }
  return out;
}

void check_probs(const SoftLabel& s, const std::array<double, 5>& want) {
  for (std::size_t i = 0; i < 5; ++i) CHECK(s[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

}  // namespace

TEST_CASE("load_pins parses records with defaults") {
  TempDir dir;
  CHECK(load_pins(dir.write("empty.jsonl", "")).empty());

  const auto pins = load_pins(dir.write("one.jsonl", R"({"pin_id":"p1","title":"red dress"})" "\n"));
  REQUIRE(pins.size() == 1);
  CHECK(pins[0].pin_id == "p1");
  CHECK(pins[0].title == "red dress");
  CHECK(pins[0].description.empty());
  CHECK(pins[0].link_title.empty());
  CHECK(pins[0].link_description.empty());
  CHECK(pins[0].synthetic_caption.empty());
  CHECK(pins[0].board_titles.empty());
  CHECK(pins[0].engaged_query_tokens.empty());
  CHECK_FALSE(pins[0].pin_embedding.has_value());
}

TEST_CASE("load_pins rejects duplicate ids and malformed lines") {
  TempDir dir;
  const auto dup = dir.write("dup.jsonl", "{\"pin_id\":\"p1\"}\n{\"pin_id\":\"p1\"}\n");
  CHECK_THROWS_AS(load_pins(dup), ValidationError);
  const auto bad = dir.write("bad.jsonl", "{\"pin_id\":\"p1\"}\n{not json\n");
  try {
    load_pins(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_pins(dir / "missing.jsonl"), Error);
}

TEST_CASE("load_queries parses and validates text") {
  TempDir dir;
  CHECK(load_queries(dir.write("empty.jsonl", "")).empty());
  const auto qs =
      load_queries(dir.write("q.jsonl", R"({"query_id":"q1","text":"summer outfit"})" "\n"));
  REQUIRE(qs.size() == 1);
  CHECK(qs[0].query_id == "q1");
  CHECK(qs[0].text == "summer outfit");
  CHECK_THROWS_AS(load_queries(dir.write("blank.jsonl", R"({"query_id":"q2","text":"  "})" "\n")),
                  ValidationError);
}

TEST_CASE("pin records round-trip through JSON") {
  PinDocument pin;
  pin.pin_id = "p9";
  pin.title = "t";
  pin.description = "d";
  pin.link_title = "lt";
  pin.link_description = "ld";
  pin.synthetic_caption = "c";
  pin.board_titles = {"b1", "b2"};
  pin.engaged_query_tokens = {"x", "y"};
  pin.pin_embedding = std::vector<double>{0.125, -2.5};
  pin.categorical_attrs = {{"format", "video"}};
  pin.engagement_rate = {{"repin", 0.25}};
  CHECK(pin_from_json(to_json(pin)) == pin);
}

TEST_CASE("aggregate_soft_label is the mean of one-hot ratings") {
  check_probs(aggregate_soft_label({"q", "p", {5, 5, 5}}), {0, 0, 0, 0, 1});
  check_probs(aggregate_soft_label({"q", "p", {4, 4, 5}}), {0, 0, 0, 2.0 / 3.0, 1.0 / 3.0});
  check_probs(aggregate_soft_label({"q", "p", {1, 3, 5}}), {1.0 / 3.0, 0, 1.0 / 3.0, 0, 1.0 / 3.0});
  CHECK_THROWS_AS(aggregate_soft_label({"q", "p", {}}), ValidationError);
  CHECK_THROWS_AS(aggregate_soft_label({"q", "p", {0, 3}}), ValidationError);
  CHECK_THROWS_AS(aggregate_soft_label({"q", "p", {6}}), ValidationError);
}

TEST_CASE("SoftLabel validates and breaks argmax ties low") {
  CHECK_THROWS_AS(SoftLabel({0.5, 0.5, 0.5, 0, 0}), ValidationError);
  CHECK_THROWS_AS(SoftLabel({-0.1, 1.1, 0, 0, 0}), ValidationError);
  CHECK(SoftLabel({0, 0.5, 0, 0.5, 0}).argmax_level() == 2);
  CHECK(SoftLabel().argmax_level() == 1);
  CHECK(SoftLabel::one_hot(5).expected_gain() == 1.0);
  CHECK(SoftLabel().expected_gain() == doctest::Approx(0.5));
  CHECK_THROWS_AS(SoftLabel::one_hot(0), ValidationError);
}

TEST_CASE("split_by_query boundaries and determinism") {
  const auto ex = examples_over(200, 3);
  const auto none = split_by_query(ex, 0.0, 11);
  CHECK(none.train.size() == ex.size());
  CHECK(none.test.empty());
  const auto all = split_by_query(ex, 1.0, 11);
  CHECK(all.test.size() == ex.size());
  CHECK(all.train.empty());

  const auto a = split_by_query(ex, 0.3, 11);
  const auto b = split_by_query(ex, 0.3, 11);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() + a.test.size() == ex.size());
}

TEST_CASE("split_by_query never splits a query across sides") {
  const auto ex = examples_over(300, 4);
  const auto s = split_by_query(ex, 0.25, 3);
  std::set<std::string> train_q, test_q;
  for (const auto& e : s.train) train_q.insert(e.query_id);
  for (const auto& e : s.test) test_q.insert(e.query_id);
  for (const auto& q : test_q) CHECK(train_q.count(q) == 0);
  // The held-out share tracks the requested fraction.
  const double frac = static_cast<double>(test_q.size()) / 300.0;
  CHECK(frac == doctest::Approx(0.25).epsilon(0.3));
  // A different seed gives a different partition.
  const auto other = split_by_query(ex, 0.25, 4);
  CHECK(other.test != s.test);
}

TEST_CASE("embedding store parsing") {
  TempDir dir;
  CHECK(load_embedding_store(dir.write("e.jsonl", ""), 2).empty());
  const auto store =
      load_embedding_store(dir.write("one.jsonl", R"({"id":"p1","vector":[0.0,0.0]})" "\n"), 2);
  REQUIRE(store.size() == 1);
  CHECK(store.at("p1") == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(
      load_embedding_store(dir.write("bad.jsonl", R"({"id":"p1","vector":[1,2,3]})" "\n"), 2),
      ValidationError);
}

TEST_CASE("apply_engagement fills rates from the log") {
  std::vector<PinDocument> pins(2);
  pins[0].pin_id = "a";
  pins[1].pin_id = "b";
  const std::vector<EngagementRecord> log{{"q1", "a", 1, 2, 10}, {"q2", "a", 1, 0, 10}};
  apply_engagement(log, pins);
  REQUIRE_FALSE(pins[0].engagement_rate.empty());
  for (const auto& [name, rate] : pins[0].engagement_rate) {
    CHECK(rate >= 0.0);
    CHECK(rate <= 1.0);
  }
  CHECK(pins[1].engagement_rate.empty());
}

TEST_CASE("record store lookup") {
  std::vector<QueryRecord> qs{{"q1", "a", std::nullopt}, {"q2", "b", std::nullopt}};
  const QueryStore store(qs);
  CHECK(store.contains("q2"));
  CHECK(store.at("q1").text == "a");
  CHECK(store.find("zz") == nullptr);
  CHECK_THROWS_AS(store.at("zz"), ValidationError);
}
