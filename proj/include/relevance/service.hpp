#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/features.hpp"
#include "relevance/student.hpp"

namespace relevance::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path student_checkpoint;
  std::filesystem::path bm25_index;
  std::filesystem::path pin_store;
  std::filesystem::path query_store;  // optional; supplies query embeddings by id
  std::size_t max_batch_size = 1000;
  int request_timeout_ms = 5000;

  /// max_batch_size >= 1, port in range, and every given path exists.
  void validate() const;
};

nlohmann::json to_json(const ServiceConfig& config);
ServiceConfig service_config_from_json(const nlohmann::json& j);

struct ScoreRequest {
  std::string query_text;
  std::optional<std::string> query_id;
  std::vector<std::string> pin_ids;
};

/// Throws ValidationError describing the first problem found.
ScoreRequest parse_score_request(const nlohmann::json& j);

struct PinScore {
  std::string pin_id;
  corpus::SoftLabel probs;
  double relevance_score = 0.0;  // expected mapped gain
};

struct ScoreResponse {
  std::vector<PinScore> results;     // request order, unknown ids omitted
  std::vector<std::string> skipped;  // unknown ids, request order
};

nlohmann::json to_json(const ScoreResponse& response);

/// Immutable scoring state shared by the HTTP handlers and offline callers.
class ScoringEngine {
 public:
  ScoringEngine(student::StudentModel model, features::Bm25Index index,
                std::vector<corpus::PinDocument> pins, std::vector<corpus::QueryRecord> queries);

  /// Loads every artifact named in `config`; failures name the artifact.
  static ScoringEngine load(const ServiceConfig& config);

  /// The query as features see it: request text, plus id and embedding from
  /// the query store when the id is known.
  corpus::QueryRecord resolve_query(const std::string& text,
                                    const std::optional<std::string>& query_id) const;

  ScoreResponse score(const ScoreRequest& request) const;

  const student::StudentModel& model() const { return model_; }
  const features::Bm25Index& index() const { return index_; }
  const corpus::PinStore& pins() const { return pins_; }
  const corpus::QueryStore& queries() const { return queries_; }

 private:
  student::StudentModel model_;
  features::Bm25Index index_;
  corpus::PinStore pins_;
  corpus::QueryStore queries_;
  std::vector<features::PinTokens> pin_tokens_;  // parallel to pins_.records()
  std::unordered_map<std::string, std::size_t> pin_pos_;
};

/// Request counter and handler latencies; safe to update from any thread.
class LatencyStats {
 public:
  void record(double millis);

  struct Snapshot {
    std::uint64_t count = 0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
  };
  Snapshot snapshot() const;

 private:
  static constexpr std::size_t kWindow = 100000;
  mutable std::mutex mu_;
  std::uint64_t count_ = 0;
  std::vector<double> samples_;  // ring buffer of the latest kWindow values
};

/// Nearest-rank percentile of `values` (q in [0, 1]); 0 when empty.
double percentile(std::vector<double> values, double q);

/// HTTP front end: POST /v1/score, GET /healthz, GET /stats.
class Server {
 public:
  Server(std::shared_ptr<const ScoringEngine> engine, ServiceConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listening socket; returns the bound port. Throws on failure.
  int bind();
  /// Serves until stop(); call bind() first.
  void listen();
  /// Blocks until a concurrent listen() is accepting connections.
  void wait_until_ready() const;
  void stop();

  const LatencyStats& stats() const { return stats_; }

 private:
  struct Impl;
  LatencyStats stats_;
  std::unique_ptr<Impl> impl_;
};

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace relevance::service
