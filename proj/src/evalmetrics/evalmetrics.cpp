#include "relevance/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace relevance::eval {

using nlohmann::json;

double relevance_gain(int level) {
  if (level < 1 || level > corpus::kNumLevels) {
    throw ValidationError("relevance level " + std::to_string(level) + " outside 1..5");
  }
  return 0.25 * static_cast<double>(level - 1);
}

double accuracy(std::span<const ScoredExample> scored) {
  if (scored.empty()) throw ValidationError("accuracy of an empty set is undefined");
  std::size_t hits = 0;
  for (const auto& s : scored) {
    if (s.predicted.argmax_level() == s.truth.argmax_level()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scored.size());
}

double binarized_score(const corpus::SoftLabel& predicted, int threshold) {
  if (threshold < 1 || threshold > corpus::kNumLevels) {
    throw ValidationError("binarization threshold outside 1..5");
  }
  double s = 0.0;
  for (int c = threshold; c <= corpus::kNumLevels; ++c) s += predicted[static_cast<std::size_t>(c - 1)];
  return std::min(1.0, s);
}

bool binarized_truth(const corpus::SoftLabel& truth, int threshold) {
  return truth.argmax_level() >= threshold;
}

double auroc(std::span<const double> scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) {
    throw ValidationError("auroc needs one label per score");
  }
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auroc is undefined without both positives and negatives");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based average ranks of the positives.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (positives[order[k]]) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(n_pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(n_neg));
}

double ndcg_at_k(const RankedList& list, int k) {
  if (k < 1) throw ValidationError("nDCG cutoff K must be at least 1");
  double dcg = 0.0;
  double ideal = 0.0;
  for (int rank = 1; rank <= k; ++rank) {
    const double discount = 1.0 / std::log2(1.0 + rank);
    ideal += discount;
    if (static_cast<std::size_t>(rank) <= list.size()) {
      dcg += relevance_gain(list[static_cast<std::size_t>(rank - 1)]) * discount;
    }
  }
  return dcg / ideal;
}

double precision_at_k(const RankedList& list, int k) {
  if (k < 1) throw ValidationError("precision cutoff K must be at least 1");
  double total = 0.0;
  for (int rank = 1; rank <= k && static_cast<std::size_t>(rank) <= list.size(); ++rank) {
    total += relevance_gain(list[static_cast<std::size_t>(rank - 1)]);
  }
  return total / static_cast<double>(k);
}

EvalReport build_report(std::span<const ScoredExample> scored,
                        std::span<const RankedList> ranked_lists, std::span<const int> ks) {
  EvalReport r;
  r.n_examples = scored.size();
  r.accuracy = accuracy(scored);

  auto auroc_at = [&](int threshold) -> std::optional<double> {
    std::vector<double> s;
    std::vector<bool> pos;
    s.reserve(scored.size());
    pos.reserve(scored.size());
    for (const auto& ex : scored) {
      s.push_back(binarized_score(ex.predicted, threshold));
      pos.push_back(binarized_truth(ex.truth, threshold));
    }
    const auto n_pos = std::count(pos.begin(), pos.end(), true);
    if (n_pos == 0 || static_cast<std::size_t>(n_pos) == pos.size()) return std::nullopt;
    return auroc(s, pos);
  };
  r.auroc_3plus = auroc_at(3);
  r.auroc_4plus = auroc_at(4);
  r.auroc_5plus = auroc_at(5);

  if (!ranked_lists.empty() && !ks.empty()) {
    std::map<int, double> ndcg;
    std::map<int, double> prec;
    for (int k : ks) {
      double n_sum = 0.0;
      double p_sum = 0.0;
      for (const auto& list : ranked_lists) {
        n_sum += ndcg_at_k(list, k);
        p_sum += precision_at_k(list, k);
      }
      const double m = static_cast<double>(ranked_lists.size());
      ndcg[k] = n_sum / m;
      prec[k] = p_sum / m;
    }
    r.ndcg_at_k = std::move(ndcg);
    r.precision_at_k = std::move(prec);
  }
  return r;
}

namespace {

json optional_value(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json optional_map(const std::optional<std::map<int, double>>& m) {
  if (!m) return nullptr;
  json j = json::object();
  for (const auto& [k, v] : *m) j[std::to_string(k)] = v;
  return j;
}

std::optional<double> read_optional(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

std::optional<std::map<int, double>> read_optional_map(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  std::map<int, double> m;
  for (const auto& [k, v] : it->items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

std::string fmt3(const std::optional<double>& v) {
  if (!v) return "  -  ";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", *v);
  return buf;
}

}  // namespace

json to_json(const EvalReport& report) {
  return json{{"n_examples", report.n_examples},
              {"accuracy", report.accuracy},
              {"auroc_3plus", optional_value(report.auroc_3plus)},
              {"auroc_4plus", optional_value(report.auroc_4plus)},
              {"auroc_5plus", optional_value(report.auroc_5plus)},
              {"ndcg_at_k", optional_map(report.ndcg_at_k)},
              {"precision_at_k", optional_map(report.precision_at_k)}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.n_examples = j.at("n_examples").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.auroc_3plus = read_optional(j, "auroc_3plus");
  r.auroc_4plus = read_optional(j, "auroc_4plus");
  r.auroc_5plus = read_optional(j, "auroc_5plus");
  r.ndcg_at_k = read_optional_map(j, "ndcg_at_k");
  r.precision_at_k = read_optional_map(j, "precision_at_k");
  return r;
}

std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 13;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
  out << pad("Training Data") << "  Accuracy  AUROC 3+/4+/5+\n";
  out << std::string(width, '-') << "  --------  -----------------\n";
  for (const auto& [name, r] : rows) {
    out << pad(name) << "  " << fmt3(r.accuracy) << "     " << fmt3(r.auroc_3plus) << '/'
        << fmt3(r.auroc_4plus) << '/' << fmt3(r.auroc_5plus) << '\n';
  }
  return out.str();
}

}  // namespace relevance::eval
