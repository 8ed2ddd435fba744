#include "relevance/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace relevance::service {

using nlohmann::json;

// --- config -----------------------------------------------------------------

void ServiceConfig::validate() const {
  if (max_batch_size < 1) throw ValidationError("max_batch_size must be at least 1");
  if (port < 0 || port > 65535) throw ValidationError("port out of range");
  if (request_timeout_ms <= 0) throw ValidationError("request timeout must be positive");
  const std::pair<const char*, const std::filesystem::path*> required[] = {
      {"student checkpoint", &student_checkpoint},
      {"bm25 index", &bm25_index},
      {"pin store", &pin_store},
  };
  for (const auto& [what, path] : required) {
    if (path->empty()) throw ValidationError(std::string(what) + " path is not set");
    if (!std::filesystem::exists(*path)) {
      throw ValidationError(std::string(what) + " '" + path->string() + "' does not exist");
    }
  }
  if (!query_store.empty() && !std::filesystem::exists(query_store)) {
    throw ValidationError("query store '" + query_store.string() + "' does not exist");
  }
}

json to_json(const ServiceConfig& c) {
  return json{{"host", c.host},
              {"port", c.port},
              {"student_checkpoint", c.student_checkpoint.string()},
              {"bm25_index", c.bm25_index.string()},
              {"pin_store", c.pin_store.string()},
              {"query_store", c.query_store.string()},
              {"max_batch_size", c.max_batch_size},
              {"request_timeout_ms", c.request_timeout_ms}};
}

ServiceConfig service_config_from_json(const json& j) {
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.student_checkpoint = j.value("student_checkpoint", std::string());
  c.bm25_index = j.value("bm25_index", std::string());
  c.pin_store = j.value("pin_store", std::string());
  c.query_store = j.value("query_store", std::string());
  c.max_batch_size = j.value("max_batch_size", c.max_batch_size);
  c.request_timeout_ms = j.value("request_timeout_ms", c.request_timeout_ms);
  return c;
}

// --- wire types -------------------------------------------------------------

ScoreRequest parse_score_request(const json& j) {
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  ScoreRequest req;
  auto text = j.find("query_text");
  if (text == j.end() || !text->is_string()) {
    throw ValidationError("'query_text' must be a string");
  }
  req.query_text = text->get<std::string>();
  if (auto id = j.find("query_id"); id != j.end() && !id->is_null()) {
    if (!id->is_string()) throw ValidationError("'query_id' must be a string");
    req.query_id = id->get<std::string>();
  }
  auto ids = j.find("pin_ids");
  if (ids == j.end() || !ids->is_array()) throw ValidationError("'pin_ids' must be an array");
  req.pin_ids.reserve(ids->size());
  for (const auto& id : *ids) {
    if (!id.is_string()) throw ValidationError("every pin id must be a string");
    req.pin_ids.push_back(id.get<std::string>());
  }
  return req;
}

json to_json(const ScoreResponse& r) {
  json results = json::array();
  for (const auto& s : r.results) {
    results.push_back(
        {{"pin_id", s.pin_id}, {"probs", s.probs.probs()}, {"relevance_score", s.relevance_score}});
  }
  return json{{"results", results}, {"skipped", r.skipped}};
}

// --- engine -----------------------------------------------------------------

ScoringEngine::ScoringEngine(student::StudentModel model, features::Bm25Index index,
                             std::vector<corpus::PinDocument> pins,
                             std::vector<corpus::QueryRecord> queries)
    : model_(std::move(model)),
      index_(std::move(index)),
      pins_(std::move(pins)),
      queries_(std::move(queries)) {
  model_.validate();
  const auto records = pins_.records();
  pin_tokens_.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    pin_tokens_.push_back(features::PinTokens::of(records[i]));
    pin_pos_.emplace(records[i].pin_id, i);
  }
}

ScoringEngine ScoringEngine::load(const ServiceConfig& config) {
  config.validate();
  auto model = student::load_student(config.student_checkpoint);
  auto index = features::Bm25Index::load(config.bm25_index);
  auto pins = corpus::load_pins(config.pin_store);
  std::vector<corpus::QueryRecord> queries;
  if (!config.query_store.empty()) queries = corpus::load_queries(config.query_store);
  return ScoringEngine(std::move(model), std::move(index), std::move(pins), std::move(queries));
}

corpus::QueryRecord ScoringEngine::resolve_query(
    const std::string& text, const std::optional<std::string>& query_id) const {
  corpus::QueryRecord q;
  q.text = text;
  if (query_id) {
    q.query_id = *query_id;
    if (const auto* known = queries_.find(*query_id)) q.query_embedding = known->query_embedding;
  }
  return q;
}

ScoreResponse ScoringEngine::score(const ScoreRequest& request) const {
  const auto query = resolve_query(request.query_text, request.query_id);
  const auto query_tokens = textrep::tokenize(query.text);
  const auto records = pins_.records();
  ScoreResponse response;
  response.results.reserve(request.pin_ids.size());
  for (const auto& id : request.pin_ids) {
    auto it = pin_pos_.find(id);
    if (it == pin_pos_.end()) {
      response.skipped.push_back(id);
      continue;
    }
    const auto fv = features::assemble_features(query, query_tokens, records[it->second],
                                                pin_tokens_[it->second], index_, model_.layout);
    auto probs = student::student_forward(model_, fv);
    const double gain = probs.expected_gain();
    response.results.push_back({id, std::move(probs), gain});
  }
  return response;
}

// --- stats ------------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q * static_cast<double>(values.size()));
  const auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
  return values[std::min(idx, values.size() - 1)];
}

void LatencyStats::record(double millis) {
  std::lock_guard lock(mu_);
  if (samples_.size() < kWindow) {
    samples_.push_back(millis);
  } else {
    samples_[count_ % kWindow] = millis;
  }
  ++count_;
}

LatencyStats::Snapshot LatencyStats::snapshot() const {
  std::vector<double> copy;
  Snapshot s;
  {
    std::lock_guard lock(mu_);
    copy = samples_;
    s.count = count_;
  }
  std::sort(copy.begin(), copy.end());
  s.p50_ms = percentile(copy, 0.50);
  s.p99_ms = percentile(std::move(copy), 0.99);
  return s;
}

// --- HTTP -------------------------------------------------------------------

struct Server::Impl {
  std::shared_ptr<const ScoringEngine> engine;
  ServiceConfig config;
  httplib::Server http;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

Server::Server(std::shared_ptr<const ScoringEngine> engine, ServiceConfig config)
    : impl_(std::make_unique<Impl>()) {
  impl_->engine = std::move(engine);
  impl_->config = std::move(config);
  auto& http = impl_->http;
  const auto timeout = std::chrono::milliseconds(impl_->config.request_timeout_ms);
  http.set_read_timeout(timeout);
  http.set_write_timeout(timeout);

  http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  http.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    const auto s = stats_.snapshot();
    res.set_content(
        json{{"request_count", s.count}, {"latency_p50_ms", s.p50_ms}, {"latency_p99_ms", s.p99_ms}}
            .dump(),
        "application/json");
  });

  http.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
    const auto start = std::chrono::steady_clock::now();
    try {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        send_error(res, 400, std::string("malformed JSON: ") + e.what());
        return;
      }
      const auto request = parse_score_request(body);
      if (request.pin_ids.size() > impl_->config.max_batch_size) {
        send_error(res, 400,
                   "batch of " + std::to_string(request.pin_ids.size()) +
                       " pins exceeds max_batch_size " +
                       std::to_string(impl_->config.max_batch_size));
        return;
      }
      const auto response = impl_->engine->score(request);
      res.set_content(to_json(response).dump(), "application/json");
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
      return;
    } catch (const std::exception& e) {
      spdlog::error("score handler failed: {}", e.what());
      send_error(res, 500, e.what());
      return;
    }
    const std::chrono::duration<double, std::milli> elapsed =
        std::chrono::steady_clock::now() - start;
    stats_.record(elapsed.count());
  });
}

Server::~Server() { stop(); }

int Server::bind() {
  auto& http = impl_->http;
  const auto& cfg = impl_->config;
  int port = cfg.port;
  if (port == 0) {
    port = http.bind_to_any_port(cfg.host);
    if (port < 0) throw Error("cannot bind " + cfg.host + " to a free port");
  } else if (!http.bind_to_port(cfg.host, port)) {
    throw Error("cannot bind " + cfg.host + ":" + std::to_string(port));
  }
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

void Server::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace relevance::service
