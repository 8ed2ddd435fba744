#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/evalmetrics.hpp"
#include "relevance/features.hpp"
#include "relevance/student.hpp"
#include "relevance/teacher.hpp"

namespace relevance::pipeline {

using LevelCounts = std::array<std::size_t, corpus::kNumLevels>;

// --- pseudo-labelling -------------------------------------------------------

struct UnlabeledPair {
  std::string query_id;
  std::string pin_id;
  double weight = 1.0;  // engagement count
};

/// One pair per distinct (query, pin) in the log, in first-seen order,
/// weighted by repins + long clicks.
std::vector<UnlabeledPair> pairs_from_engagement(std::span<const corpus::EngagementRecord> log);

struct LabelPoolResult {
  std::vector<corpus::LabeledExample> examples;
  std::size_t skipped = 0;
  std::vector<std::string> skip_reasons;  // first few, for the report
};

/// Scores every resolvable pair with `scorer`; unknown ids are skipped and
/// counted. Output order follows input order for any thread count.
LabelPoolResult label_pool(const teacher::TeacherScorer& scorer,
                           std::span<const UnlabeledPair> pairs, const corpus::QueryStore& queries,
                           const corpus::PinStore& pins, std::size_t threads = 1);

// --- stratified sampling ----------------------------------------------------

struct SamplingSpec {
  std::int64_t target_total = 0;
  std::array<double, corpus::kNumLevels> target_distribution{0.2, 0.2, 0.2, 0.2, 0.2};
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleResult {
  std::vector<corpus::LabeledExample> examples;  // in pool order
  LevelCounts quotas{};
  LevelCounts taken{};
  LevelCounts shortfall{};
};

/// Stratum of an example is its argmax level (ties to the lowest). Quota per
/// level is round(target_total * fraction); each stratum is sampled without
/// replacement. Short strata are taken whole and the gap is reported, never
/// filled from other levels.
SampleResult stratified_sample(std::span<const corpus::LabeledExample> pool,
                               const SamplingSpec& spec);

nlohmann::json to_json(const SampleResult& result);

// --- evaluation and scaling -------------------------------------------------

/// A held-out pair with its features and reference label.
struct EvalExample {
  std::string query_id;
  std::string pin_id;
  features::StudentFeatureVector features;
  corpus::SoftLabel truth;
};

/// Accuracy/AUROC over every example plus nDCG and precision over per-query
/// lists ranked by predicted expected gain (ties by pin id).
eval::EvalReport evaluate_student(const student::StudentModel& model,
                                  std::span<const EvalExample> test, std::span<const int> ks);

/// FNV-1a over ids and reference labels; identifies a test set.
std::uint64_t test_set_hash(std::span<const EvalExample> test);

using FeatureFn = std::function<features::StudentFeatureVector(const corpus::LabeledExample&)>;

struct ScalingConfig {
  student::StudentTrainConfig train;
  std::uint64_t sample_seed = 7;
  double valid_fraction = 0.1;  // by query, carved from each sample
  std::vector<int> ks{8};
};

struct ScalingRow {
  std::string name;
  std::size_t requested = 0;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
  LevelCounts shortfall{};
  eval::EvalReport report;
  std::uint64_t test_set_hash = 0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::uint64_t test_set_hash = 0;
};

/// Samples, trains and evaluates one student on `pool` at `size`.
ScalingRow train_and_evaluate(std::span<const corpus::LabeledExample> pool, std::size_t size,
                              std::span<const EvalExample> test, const FeatureFn& featurize,
                              const features::FeatureLayout& layout, const ScalingConfig& config);

/// One row per size (ascending). Every row is evaluated on the same `test`
/// set; a hash mismatch between rows is an error.
ScalingReport run_scaling_experiment(std::span<const corpus::LabeledExample> pool,
                                     std::span<const std::size_t> sizes,
                                     std::span<const EvalExample> test, const FeatureFn& featurize,
                                     const features::FeatureLayout& layout,
                                     const ScalingConfig& config);

nlohmann::json to_json(const ScalingRow& row);
nlohmann::json to_json(const ScalingReport& report);
std::string format_scaling_table(const ScalingReport& report);

// --- synthetic corpus -------------------------------------------------------

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t n_queries = 10000;
  std::size_t n_pins = 50000;
  std::size_t vocab_size = 200;  // filler words
  std::size_t n_concepts = 16;
  std::size_t synonyms = 2;  // surface forms per concept
  std::size_t annotations_per_query = 6;
  std::size_t raters = 3;
  double rater_noise = 0.3;
  std::size_t n_engagement = 300000;
  std::size_t embed_dim = 16;
  double embed_noise = 0.35;
  double missing_embedding = 0.05;
  std::array<double, corpus::kNumLevels> annotation_prior{0.160, 0.197, 0.289, 0.131, 0.223};
  std::array<double, corpus::kNumLevels> engagement_prior{0.2, 0.2, 0.2, 0.2, 0.2};

  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

struct TruthRecord {
  std::string query_id;
  std::string pin_id;
  int level = 1;
};

nlohmann::json to_json(const TruthRecord& t);
TruthRecord truth_from_json(const nlohmann::json& j);

struct SyntheticCorpus {
  std::vector<corpus::PinDocument> pins;
  std::vector<corpus::QueryRecord> queries;
  std::vector<corpus::RaterAnnotation> annotations;
  std::vector<corpus::EngagementRecord> engagement;
  std::vector<TruthRecord> truth;  // every annotated or logged pair
};

/// Latent-concept corpus. Each query names 4 of `n_concepts` concepts and
/// each pin carries 5, one per text group (caption, title/description, link,
/// a board title, engaged query tokens), so every family adds information.
/// A concept is written with one of `synonyms` surface forms chosen
/// independently on each side. Ground truth is 1 + the number of shared
/// concepts. Pins are left without engagement rates; apply the log with
/// corpus::apply_engagement.
SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

/// pins.jsonl, queries.jsonl, annotations.jsonl, engagement.jsonl,
/// truth.jsonl and synth_config.json under `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus,
                     const SyntheticConfig& config);

std::vector<TruthRecord> load_truth(const std::filesystem::path& path);

// --- workflow helpers -------------------------------------------------------

/// Vocabulary over query text and every text family of the (imputed) pins.
textrep::Vocabulary corpus_vocabulary(std::span<const corpus::PinDocument> pins,
                                      std::span<const corpus::QueryRecord> queries,
                                      std::size_t min_freq = 1);

/// Cross-encoder inputs for labelled pairs; pairs with unknown ids are
/// dropped.
std::vector<teacher::TeacherExample> teacher_examples(
    std::span<const corpus::LabeledExample> examples, const corpus::QueryStore& queries,
    const corpus::PinStore& pins, const textrep::Vocabulary& vocab,
    const textrep::TextRepConfig& config);

/// Soft labels from rater annotations (mean of one-hots), source human.
std::vector<corpus::LabeledExample> human_examples(
    std::span<const corpus::RaterAnnotation> annotations);

/// One-hot labels at the generator's ground truth.
std::vector<corpus::LabeledExample> truth_examples(std::span<const TruthRecord> truth);

/// Held-out pairs with features; pairs with unknown ids are dropped.
std::vector<EvalExample> eval_examples(std::span<const corpus::LabeledExample> examples,
                                       const corpus::QueryStore& queries,
                                       const corpus::PinStore& pins,
                                       const features::Bm25Index& index,
                                       const features::FeatureLayout& layout);

/// Feature function over fixed stores.
class Featurizer {
 public:
  Featurizer(const corpus::QueryStore& queries, const corpus::PinStore& pins,
             const features::Bm25Index& index, const features::FeatureLayout& layout);

  features::StudentFeatureVector operator()(const corpus::LabeledExample& ex) const;
  features::StudentFeatureVector operator()(const corpus::QueryRecord& query,
                                            const corpus::PinDocument& pin) const;

 private:
  const corpus::QueryStore& queries_;
  const corpus::PinStore& pins_;
  const features::Bm25Index& index_;
  const features::FeatureLayout& layout_;
};

}  // namespace relevance::pipeline
