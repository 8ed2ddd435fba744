#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <map>
#include <set>

#include "relevance/pipeline.hpp"
#include "test_support.hpp"

using namespace relevance;
using namespace relevance::pipeline;
using corpus::LabeledExample;
using corpus::SoftLabel;

namespace {

class FixedScorer final : public teacher::TeacherScorer {
 public:
  explicit FixedScorer(SoftLabel out) : out_(out) {}
  SoftLabel score(std::string_view, const corpus::PinDocument&) const override {
    ++calls;
    return out_;
  }
  mutable std::atomic<int> calls{0};

 private:
  SoftLabel out_;
};

// Level depends on the pin id so order mistakes show up.
class IdScorer final : public teacher::TeacherScorer {
 public:
  SoftLabel score(std::string_view query, const corpus::PinDocument& pin) const override {
    const auto h = fnv1a64(pin.pin_id, fnv1a64(query));
    return SoftLabel::one_hot(1 + static_cast<int>(h % 5));
  }
};

std::vector<LabeledExample> pool_with_counts(const std::array<int, 5>& counts) {
  std::vector<LabeledExample> pool;
  int n = 0;
  for (int level = 1; level <= 5; ++level) {
    for (int i = 0; i < counts[static_cast<std::size_t>(level - 1)]; ++i, ++n) {
      pool.push_back({"q" + std::to_string(n % 37), "p" + std::to_string(n), SoftLabel::one_hot(level),
                      corpus::LabelSource::kTeacher});
    }
  }
  // Interleave levels so pool order is not level order.
  Rng rng(1);
  rng.shuffle(std::span<LabeledExample>(pool));
  return pool;
}

SyntheticConfig tiny_synth() {
  SyntheticConfig cfg;
  cfg.n_queries = 200;
  cfg.n_pins = 2000;
  cfg.n_engagement = 3000;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("pairs_from_engagement deduplicates and weights") {
  const std::vector<corpus::EngagementRecord> log{
      {"q1", "a", 1, 1, 10}, {"q2", "b", 0, 0, 10}, {"q1", "a", 2, 0, 10}};
  const auto pairs = pairs_from_engagement(log);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].query_id == "q1");
  CHECK(pairs[0].pin_id == "a");
  CHECK(pairs[0].weight == 4.0);
  CHECK(pairs[1].pin_id == "b");
}

TEST_CASE("label_pool with a stub scorer") {
  std::vector<corpus::PinDocument> pins(2);
  pins[0].pin_id = "a";
  pins[1].pin_id = "b";
  const std::vector<corpus::QueryRecord> queries{{"q1", "red", std::nullopt}};
  const corpus::PinStore pin_store(pins);
  const corpus::QueryStore query_store(queries);
  const SoftLabel fixed({0.1, 0.2, 0.3, 0.2, 0.2});
  const FixedScorer scorer(fixed);

  CHECK(label_pool(scorer, std::vector<UnlabeledPair>{}, query_store, pin_store).examples.empty());

  std::vector<UnlabeledPair> three{{"q1", "a"}, {"q1", "b"}, {"q1", "a"}};
  auto r = label_pool(scorer, three, query_store, pin_store);
  REQUIRE(r.examples.size() == 3);
  for (const auto& ex : r.examples) {
    CHECK(ex.label == fixed);
    CHECK(ex.source == corpus::LabelSource::kTeacher);
  }

  three[1].pin_id = "zz";
  r = label_pool(scorer, three, query_store, pin_store);
  CHECK(r.examples.size() == 2);
  CHECK(r.skipped == 1);
  CHECK(r.examples.size() + r.skipped == three.size());
  CHECK_FALSE(r.skip_reasons.empty());
}

TEST_CASE("label_pool output order is independent of thread count") {
  std::vector<corpus::PinDocument> pins;
  for (int i = 0; i < 50; ++i) {
    corpus::PinDocument p;
    p.pin_id = "p" + std::to_string(i);
    pins.push_back(p);
  }
  std::vector<corpus::QueryRecord> queries;
  for (int i = 0; i < 10; ++i) queries.push_back({"q" + std::to_string(i), "t" + std::to_string(i), std::nullopt});
  std::vector<UnlabeledPair> pairs;
  Rng rng(3);
  for (int i = 0; i < 700; ++i) {
    pairs.push_back({"q" + std::to_string(rng.below(10)), "p" + std::to_string(rng.below(55))});
  }
  const corpus::PinStore ps(pins);
  const corpus::QueryStore qs(queries);
  const IdScorer scorer;
  const auto one = label_pool(scorer, pairs, qs, ps, 1);
  const auto four = label_pool(scorer, pairs, qs, ps, 4);
  CHECK(one.examples == four.examples);
  CHECK(one.skipped == four.skipped);
  CHECK(one.examples.size() + one.skipped == pairs.size());
}

TEST_CASE("stratified_sample hits quotas and reports shortfall") {
  auto pool = pool_with_counts({12, 15, 10, 20, 11});
  SamplingSpec spec;
  spec.target_total = 50;
  spec.seed = 9;
  auto r = stratified_sample(pool, spec);
  CHECK(r.examples.size() == 50);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(r.quotas[c] == 10);
    CHECK(r.taken[c] == 10);
    CHECK(r.shortfall[c] == 0);
  }

  pool = pool_with_counts({12, 15, 10, 20, 3});
  r = stratified_sample(pool, spec);
  CHECK(r.taken[4] == 3);
  CHECK(r.shortfall[4] == 7);
  CHECK(r.examples.size() == 43);
  std::size_t l5 = 0;
  for (const auto& ex : r.examples) l5 += ex.label.argmax_level() == 5;
  CHECK(l5 == 3);

  CHECK(stratified_sample(pool, spec).examples == r.examples);
  spec.seed = 10;
  CHECK(stratified_sample(pool, spec).examples != r.examples);
}

TEST_CASE("stratified_sample properties on random pools") {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<int, 5> counts{};
    for (int& c : counts) c = static_cast<int>(rng.below(40));
    counts[0] += 1;
    const auto pool = pool_with_counts(counts);
    SamplingSpec spec;
    spec.target_total = 1 + static_cast<std::int64_t>(rng.below(150));
    spec.seed = rng.next_u64();
    const auto r = stratified_sample(pool, spec);
    std::array<std::size_t, 5> hist{};
    for (const auto& ex : r.examples) ++hist[static_cast<std::size_t>(ex.label.argmax_level() - 1)];
    for (std::size_t c = 0; c < 5; ++c) {
      const auto have = static_cast<std::size_t>(counts[c]);
      CHECK(hist[c] == std::min(have, r.quotas[c]));
      CHECK(r.shortfall[c] == (have >= r.quotas[c] ? 0 : r.quotas[c] - have));
    }
    // No duplicates, and output preserves pool order.
    std::set<std::string> ids;
    for (const auto& ex : r.examples) ids.insert(ex.pin_id);
    CHECK(ids.size() == r.examples.size());
  }
}

TEST_CASE("stratified_sample argmax ties go to the lower level") {
  std::vector<LabeledExample> pool{{"q", "a", SoftLabel({0, 0.5, 0.5, 0, 0}), corpus::LabelSource::kTeacher}};
  SamplingSpec spec;
  spec.target_total = 5;
  const auto r = stratified_sample(pool, spec);
  CHECK(r.taken[1] == 1);
  CHECK(r.taken[2] == 0);
  CHECK_THROWS_AS(stratified_sample(std::vector<LabeledExample>{}, spec), ValidationError);
  spec.target_distribution = {0.5, 0.5, 0.5, 0, 0};
  CHECK_THROWS_AS(stratified_sample(pool, spec), ValidationError);
}

TEST_CASE("synthetic generator is deterministic") {
  const auto a = generate_synthetic(tiny_synth());
  const auto b = generate_synthetic(tiny_synth());
  CHECK(a.pins == b.pins);
  CHECK(a.queries == b.queries);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].ratings == b.annotations[i].ratings);
  }
  auto other = tiny_synth();
  other.seed = 43;
  CHECK(generate_synthetic(other).pins != a.pins);
}

TEST_CASE("zero rater noise reproduces ground truth") {
  auto cfg = tiny_synth();
  cfg.rater_noise = 0.0;
  const auto corpus = generate_synthetic(cfg);
  std::map<std::pair<std::string, std::string>, int> truth;
  for (const auto& t : corpus.truth) truth[{t.query_id, t.pin_id}] = t.level;
  REQUIRE_FALSE(corpus.annotations.empty());
  for (const auto& ann : corpus.annotations) {
    CHECK(corpus::aggregate_soft_label(ann) ==
          SoftLabel::one_hot(truth.at({ann.query_id, ann.pin_id})));
  }
}

TEST_CASE("annotated truth levels follow the configured prior") {
  auto cfg = tiny_synth();
  cfg.n_queries = 1700;  // about 10k annotations
  cfg.n_pins = 20000;
  cfg.n_engagement = 0;
  cfg.rater_noise = 0.0;
  const auto corpus = generate_synthetic(cfg);
  std::array<double, 5> observed{};
  for (const auto& ann : corpus.annotations) {
    observed[static_cast<std::size_t>(corpus::aggregate_soft_label(ann).argmax_level() - 1)] += 1;
  }
  const double n = static_cast<double>(corpus.annotations.size());
  CHECK(n > 9000);
  double chi2 = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    const double expected = n * cfg.annotation_prior[c];
    chi2 += (observed[c] - expected) * (observed[c] - expected) / expected;
  }
  // 99.9th percentile of chi-squared with 4 degrees of freedom.
  CHECK(chi2 < 18.47);
}

TEST_CASE("synthetic corpus files round trip") {
  const auto cfg = tiny_synth();
  const auto corpus = generate_synthetic(cfg);
  testing::TempDir dir;
  write_synthetic(dir.path(), corpus, cfg);
  CHECK(corpus::load_pins(dir / "pins.jsonl") == corpus.pins);
  CHECK(corpus::load_queries(dir / "queries.jsonl") == corpus.queries);
  const auto truth = load_truth(dir / "truth.jsonl");
  REQUIRE(truth.size() == corpus.truth.size());
  CHECK(truth.front().level == corpus.truth.front().level);
  const auto back = synthetic_config_from_json(to_json(cfg));
  CHECK(back.n_pins == cfg.n_pins);
  CHECK(back.annotation_prior == cfg.annotation_prior);
}

TEST_CASE("every pin family carries query concepts") {
  const auto corpus = generate_synthetic(tiny_synth());
  const corpus::QueryStore queries(corpus.queries);
  const corpus::PinStore pins(corpus.pins);
  // Among level-5 pairs each family should usually share a token with the query.
  std::array<std::size_t, textrep::kNumFamilies> hits{};
  std::size_t n = 0;
  for (const auto& t : corpus.truth) {
    if (t.level != 5) continue;
    ++n;
    const auto qt = textrep::tokenize(queries.at(t.query_id).text);
    const auto tokens = features::PinTokens::of(pins.at(t.pin_id));
    for (std::size_t f = 0; f < textrep::kNumFamilies; ++f) {
      hits[f] += features::overlap_fraction(qt, tokens.families[f]) > 0 ? 1 : 0;
    }
  }
  REQUIRE(n > 20);
  CHECK(hits[static_cast<std::size_t>(textrep::FieldFamily::kCaption)] > n / 4);
  CHECK(hits[static_cast<std::size_t>(textrep::FieldFamily::kBoards)] > n / 4);
  CHECK(hits[static_cast<std::size_t>(textrep::FieldFamily::kEngagedQueries)] > 0);
}

TEST_CASE("evaluation, test-set hash and a one-row scaling report") {
  auto cfg = tiny_synth();
  auto corpus = generate_synthetic(cfg);
  corpus::apply_engagement(corpus.engagement, corpus.pins);
  const corpus::PinStore pins(corpus.pins);
  const corpus::QueryStore queries(corpus.queries);
  const auto index = features::Bm25Index::build(corpus.pins);
  const auto layout = features::FeatureLayout::from_corpus(corpus.pins, corpus.queries);
  const Featurizer featurize(queries, pins, index, layout);

  const auto labels = truth_examples(corpus.truth);
  const auto split = corpus::split_by_query(labels, 0.2, 5);
  const auto test = eval_examples(split.test, queries, pins, index, layout);
  REQUIRE(test.size() > 50);
  const auto hash = test_set_hash(test);
  auto altered = test;
  altered[0].truth = SoftLabel::one_hot(altered[0].truth.argmax_level() % 5 + 1);
  CHECK(test_set_hash(altered) != hash);

  ScalingConfig sc;
  sc.train.epochs = 2;
  sc.train.model.hidden1 = 16;
  sc.train.model.hidden2 = 8;
  const std::vector<std::size_t> sizes{400};
  const auto report = run_scaling_experiment(split.train, sizes, test, featurize, layout, sc);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].test_set_hash == hash);
  CHECK(report.test_set_hash == hash);
  CHECK(report.rows[0].report.n_examples == test.size());
  CHECK(report.rows[0].report.ndcg_at_k.has_value());
  CHECK(format_scaling_table(report).find("400 distilled") != std::string::npos);

  const std::vector<std::size_t> descending{400, 200};
  CHECK_THROWS_AS(run_scaling_experiment(split.train, descending, test, featurize, layout, sc),
                  ValidationError);
  const std::vector<std::size_t> too_big{split.train.size() + 1};
  CHECK_THROWS_AS(run_scaling_experiment(split.train, too_big, test, featurize, layout, sc),
                  ValidationError);
}

TEST_CASE("evaluate_student ranks by expected gain") {
  features::FeatureLayout layout;
  student::StudentModel model(layout, {.num_dim = 1, .cat_dim = 1, .hidden1 = 1, .hidden2 = 1}, 1);
  for (auto* t : model.parameters()) t->fill(0.0);
  // Logit of L5 grows with the caption overlap.
  model.num_w(static_cast<std::size_t>(features::kNumFamilies), 0) = 1.0;
  // Input slot of that scalar's one-wide embedding.
  model.trunk[0].weight(0, static_cast<std::size_t>(features::kNumFamilies)) = 1.0;
  model.trunk[1].weight(0, 0) = 1.0;
  model.trunk[2].weight(4, 0) = 5.0;
  std::vector<EvalExample> test;
  const std::array<double, 3> overlap{0.1, 0.9, 0.5};
  const std::array<int, 3> truth{1, 5, 3};
  for (std::size_t i = 0; i < 3; ++i) {
    EvalExample ex;
    ex.query_id = "q";
    ex.pin_id = "p" + std::to_string(i);
    ex.features.layout_fingerprint = layout.fingerprint();
    ex.features.overlap[0] = overlap[i];
    ex.truth = SoftLabel::one_hot(truth[i]);
    test.push_back(ex);
  }
  const std::vector<int> ks{3};
  const auto report = evaluate_student(model, test, ks);
  REQUIRE(report.ndcg_at_k.has_value());
  // Ranked order is levels [5, 3, 1].
  CHECK(report.ndcg_at_k->at(3) == doctest::Approx(eval::ndcg_at_k({5, 3, 1}, 3)).epsilon(1e-14));
  CHECK(report.precision_at_k->at(3) == doctest::Approx(0.5).epsilon(1e-14));
}
