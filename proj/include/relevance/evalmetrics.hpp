#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"

namespace relevance::eval {

struct ScoredExample {
  corpus::SoftLabel predicted;
  corpus::SoftLabel truth;
};

/// Ground-truth levels in rank order (rank 1 first).
using RankedList = std::vector<int>;

/// Maps L1..L5 to 0, 0.25, 0.5, 0.75, 1.0.
double relevance_gain(int level);

/// Fraction of examples whose predicted argmax level equals the true one.
double accuracy(std::span<const ScoredExample> scored);

/// Predicted probability mass at or above `threshold` (3, 4 or 5).
double binarized_score(const corpus::SoftLabel& predicted, int threshold);

/// argmax(truth) >= threshold.
bool binarized_truth(const corpus::SoftLabel& truth, int threshold);

/// Mann-Whitney AUROC via average ranks; ties count one half.
/// Throws ValidationError unless both classes are present.
double auroc(std::span<const double> scores, const std::vector<bool>& positives);

/// nDCG@K normalized by an ideal list of L5 at every rank; ranks past the
/// end of the list count as L1.
double ndcg_at_k(const RankedList& list, int k);

/// Mean mapped gain over the first K ranks (padding with gain 0).
double precision_at_k(const RankedList& list, int k);

struct EvalReport {
  std::size_t n_examples = 0;
  double accuracy = 0.0;
  std::optional<double> auroc_3plus;
  std::optional<double> auroc_4plus;
  std::optional<double> auroc_5plus;
  std::optional<std::map<int, double>> ndcg_at_k;
  std::optional<std::map<int, double>> precision_at_k;

  bool operator==(const EvalReport&) const = default;
};

/// Aggregates accuracy and AUROC over `scored`, plus mean nDCG / precision
/// at each K over `ranked_lists`. Metrics that are undefined on the input
/// are left absent.
EvalReport build_report(std::span<const ScoredExample> scored,
                        std::span<const RankedList> ranked_lists, std::span<const int> ks);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Fixed-width table in the "Accuracy & AUROC 3+/4+/5+" layout, one row per
/// labelled report.
std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace relevance::eval
