#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "relevance/pipeline.hpp"
#include "relevance/util/hash.hpp"
#include "relevance/util/rng.hpp"

namespace relevance::pipeline {

using nlohmann::json;

// --- pseudo-labelling -------------------------------------------------------

std::vector<UnlabeledPair> pairs_from_engagement(std::span<const corpus::EngagementRecord> log) {
  std::vector<UnlabeledPair> pairs;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& rec : log) {
    const auto key = rec.query_id + '\t' + rec.pin_id;
    const double w = static_cast<double>(rec.repins + rec.long_clicks);
    auto [it, inserted] = seen.emplace(key, pairs.size());
    if (inserted) {
      pairs.push_back({rec.query_id, rec.pin_id, w});
    } else {
      pairs[it->second].weight += w;
    }
  }
  return pairs;
}

LabelPoolResult label_pool(const teacher::TeacherScorer& scorer,
                           std::span<const UnlabeledPair> pairs, const corpus::QueryStore& queries,
                           const corpus::PinStore& pins, std::size_t threads) {
  constexpr std::size_t kMaxReasons = 20;
  LabelPoolResult result;

  struct Job {
    const corpus::QueryRecord* query;
    const corpus::PinDocument* pin;
  };
  std::vector<Job> jobs;
  jobs.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const auto* q = queries.find(pair.query_id);
    const auto* p = pins.find(pair.pin_id);
    if (q == nullptr || p == nullptr) {
      ++result.skipped;
      std::string reason = q == nullptr ? "unknown query_id '" + pair.query_id + "'"
                                        : "unknown pin_id '" + pair.pin_id + "'";
      if (result.skip_reasons.size() < kMaxReasons) {
        spdlog::warn("label_pool: skipping pair ({}, {}): {}", pair.query_id, pair.pin_id, reason);
        result.skip_reasons.push_back(std::move(reason));
      }
      continue;
    }
    jobs.push_back({q, p});
  }
  if (result.skipped > kMaxReasons) {
    spdlog::warn("label_pool: {} pairs skipped in total", result.skipped);
  }

  std::vector<std::optional<corpus::SoftLabel>> labels(jobs.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      labels[i] = scorer.score(jobs[i].query->text, *jobs[i].pin);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (threads == 1) {
    work(0, jobs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (jobs.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(jobs.size(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  result.examples.reserve(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    result.examples.push_back({jobs[i].query->query_id, jobs[i].pin->pin_id, *labels[i],
                               corpus::LabelSource::kTeacher});
  }
  return result;
}

// --- stratified sampling ----------------------------------------------------

void SamplingSpec::validate() const {
  if (target_total <= 0) throw ValidationError("sampling target_total must be positive");
  double total = 0.0;
  for (double f : target_distribution) {
    if (!(f >= 0.0)) throw ValidationError("sampling fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("sampling fractions must sum to 1");
}

SampleResult stratified_sample(std::span<const corpus::LabeledExample> pool,
                               const SamplingSpec& spec) {
  spec.validate();
  if (pool.empty()) throw ValidationError("cannot sample from an empty pool");

  std::array<std::vector<std::size_t>, corpus::kNumLevels> strata;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    strata[static_cast<std::size_t>(pool[i].label.argmax_level() - 1)].push_back(i);
  }

  SampleResult result;
  Rng rng(spec.seed);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < strata.size(); ++c) {
    const auto quota = static_cast<std::size_t>(
        std::llround(static_cast<double>(spec.target_total) * spec.target_distribution[c]));
    auto& members = strata[c];
    result.quotas[c] = quota;
    if (members.size() <= quota) {
      result.shortfall[c] = quota - members.size();
      result.taken[c] = members.size();
      chosen.insert(chosen.end(), members.begin(), members.end());
      continue;
    }
    // Partial Fisher-Yates: the first `quota` slots become the sample.
    for (std::size_t i = 0; i < quota; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(members.size() - i));
      std::swap(members[i], members[j]);
    }
    result.taken[c] = quota;
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota));
  }
  std::sort(chosen.begin(), chosen.end());
  result.examples.reserve(chosen.size());
  for (std::size_t i : chosen) result.examples.push_back(pool[i]);
  return result;
}

json to_json(const SampleResult& r) {
  auto counts = [](const LevelCounts& c) {
    json j = json::object();
    for (std::size_t i = 0; i < c.size(); ++i) j["L" + std::to_string(i + 1)] = c[i];
    return j;
  };
  return json{{"total", r.examples.size()},
              {"quotas", counts(r.quotas)},
              {"taken", counts(r.taken)},
              {"shortfall", counts(r.shortfall)}};
}

// --- evaluation -------------------------------------------------------------

eval::EvalReport evaluate_student(const student::StudentModel& model,
                                  std::span<const EvalExample> test, std::span<const int> ks) {
  if (test.empty()) throw ValidationError("evaluation set is empty");
  std::vector<eval::ScoredExample> scored;
  scored.reserve(test.size());
  std::map<std::string, std::vector<std::tuple<double, std::string, int>>> by_query;
  for (const auto& ex : test) {
    auto predicted = student::student_forward(model, ex.features);
    by_query[ex.query_id].emplace_back(predicted.expected_gain(), ex.pin_id,
                                       ex.truth.argmax_level());
    scored.push_back({std::move(predicted), ex.truth});
  }
  std::vector<eval::RankedList> lists;
  lists.reserve(by_query.size());
  for (auto& [query_id, items] : by_query) {
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      return std::get<1>(a) < std::get<1>(b);
    });
    eval::RankedList list;
    for (const auto& item : items) list.push_back(std::get<2>(item));
    lists.push_back(std::move(list));
  }
  return eval::build_report(scored, lists, ks);
}

std::uint64_t test_set_hash(std::span<const EvalExample> test) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& ex : test) {
    h = fnv1a64(ex.query_id, h);
    h = fnv1a64(std::string_view("\t"), h);
    h = fnv1a64(ex.pin_id, h);
    for (double p : ex.truth.probs()) {
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&p), sizeof p), h);
    }
  }
  return h;
}

// --- scaling ----------------------------------------------------------------

ScalingRow train_and_evaluate(std::span<const corpus::LabeledExample> pool, std::size_t size,
                              std::span<const EvalExample> test, const FeatureFn& featurize,
                              const features::FeatureLayout& layout, const ScalingConfig& config) {
  if (pool.size() < size) {
    throw ValidationError("pool of " + std::to_string(pool.size()) +
                          " examples is too small for size " + std::to_string(size));
  }
  SamplingSpec spec;
  spec.target_total = static_cast<std::int64_t>(size);
  spec.seed = config.sample_seed;
  const auto sample = stratified_sample(pool, spec);
  const auto split = corpus::split_by_query(sample.examples, config.valid_fraction,
                                            config.sample_seed);
  auto distill = [&](const std::vector<corpus::LabeledExample>& examples) {
    std::vector<student::DistilledExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back({featurize(ex), ex.label});
    return out;
  };
  const auto train = distill(split.train);
  const auto valid = distill(split.test);
  const auto trained = student::train_student(train, valid, layout, config.train);

  ScalingRow row;
  row.requested = size;
  row.n_train = train.size();
  row.n_valid = valid.size();
  row.shortfall = sample.shortfall;
  row.report = evaluate_student(trained.model, test, config.ks);
  row.test_set_hash = test_set_hash(test);
  return row;
}

ScalingReport run_scaling_experiment(std::span<const corpus::LabeledExample> pool,
                                     std::span<const std::size_t> sizes,
                                     std::span<const EvalExample> test, const FeatureFn& featurize,
                                     const features::FeatureLayout& layout,
                                     const ScalingConfig& config) {
  if (sizes.empty()) throw ValidationError("scaling experiment needs at least one size");
  if (!std::is_sorted(sizes.begin(), sizes.end())) {
    throw ValidationError("scaling sizes must be ascending");
  }
  for (auto size : sizes) {
    if (size == 0 || size > pool.size()) {
      throw ValidationError("pool of " + std::to_string(pool.size()) +
                            " examples cannot supply size " + std::to_string(size));
    }
  }
  ScalingReport report;
  report.test_set_hash = test_set_hash(test);
  for (auto size : sizes) {
    spdlog::info("scaling: training on {} distilled examples", size);
    auto row = train_and_evaluate(pool, size, test, featurize, layout, config);
    row.name = std::to_string(size) + " distilled";
    if (row.test_set_hash != report.test_set_hash) {
      throw Error("test set changed between scaling rows");
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

json to_json(const ScalingRow& row) {
  return json{{"name", row.name},
              {"requested", row.requested},
              {"n_train", row.n_train},
              {"n_valid", row.n_valid},
              {"shortfall", row.shortfall},
              {"report", eval::to_json(row.report)},
              {"test_set_hash", hex64(row.test_set_hash)}};
}

json to_json(const ScalingReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) rows.push_back(to_json(row));
  return json{{"test_set_hash", hex64(report.test_set_hash)}, {"rows", rows}};
}

std::string format_scaling_table(const ScalingReport& report) {
  std::vector<std::pair<std::string, eval::EvalReport>> rows;
  for (const auto& row : report.rows) rows.emplace_back(row.name, row.report);
  return eval::format_table(rows);
}

}  // namespace relevance::pipeline
