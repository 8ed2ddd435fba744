#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <future>
#include <thread>

#include <httplib.h>

#include "relevance/pipeline.hpp"
#include "relevance/service.hpp"
#include "test_support.hpp"

using namespace relevance;
using namespace relevance::service;
using nlohmann::json;

namespace {

struct Fixture {
  pipeline::SyntheticCorpus corpus;
  std::shared_ptr<const ScoringEngine> engine;

  Fixture() {
    pipeline::SyntheticConfig cfg;
    cfg.n_queries = 60;
    cfg.n_pins = 400;
    cfg.n_engagement = 500;
    cfg.seed = 11;
    corpus = pipeline::generate_synthetic(cfg);
    corpus::apply_engagement(corpus.engagement, corpus.pins);
    auto index = features::Bm25Index::build(corpus.pins);
    const auto layout = features::FeatureLayout::from_corpus(corpus.pins, corpus.queries);
    student::StudentModel model(layout, {}, 5);
    engine = std::make_shared<const ScoringEngine>(std::move(model), std::move(index), corpus.pins,
                                                   corpus.queries);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// Owns a server running on a background thread.
struct RunningServer {
  Server server;
  int port = 0;
  std::thread thread;

  explicit RunningServer(std::size_t max_batch = 1000)
      : server(fixture().engine, config(max_batch)) {
    port = server.bind();
    thread = std::thread([this] { server.listen(); });
    server.wait_until_ready();
  }
  ~RunningServer() {
    server.stop();
    thread.join();
  }

  static ServiceConfig config(std::size_t max_batch) {
    ServiceConfig c;
    c.port = 0;
    c.max_batch_size = max_batch;
    return c;
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
};

json score_body(const std::string& text, const std::vector<std::string>& ids) {
  return json{{"query_text", text}, {"pin_ids", ids}};
}

int call_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "relevance_cli");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

}  // namespace

TEST_CASE("parse_score_request validates fields") {
  const auto ok = parse_score_request(json::parse(R"({"query_text":"red","pin_ids":["a","b"]})"));
  CHECK(ok.query_text == "red");
  CHECK(ok.pin_ids == std::vector<std::string>{"a", "b"});
  CHECK_FALSE(ok.query_id.has_value());
  CHECK(parse_score_request(json::parse(R"({"query_text":"","query_id":"q1","pin_ids":[]})"))
            .query_id == "q1");
  for (const char* bad : {R"([])", R"({"pin_ids":[]})", R"({"query_text":3,"pin_ids":[]})",
                          R"({"query_text":"x"})", R"({"query_text":"x","pin_ids":"a"})",
                          R"({"query_text":"x","pin_ids":[1]})",
                          R"({"query_text":"x","query_id":5,"pin_ids":[]})"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_score_request(json::parse(bad)), ValidationError);
  }
}

TEST_CASE("percentile uses nearest rank") {
  CHECK(percentile({}, 0.5) == 0.0);
  CHECK(percentile({3, 1, 2}, 0.5) == 2.0);
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.0);
  CHECK(percentile({5}, 0.99) == 5.0);
  std::vector<double> hundred;
  for (int i = 1; i <= 100; ++i) hundred.push_back(i);
  CHECK(percentile(hundred, 0.99) == 99.0);
  CHECK(percentile(hundred, 0.0) == 1.0);
}

TEST_CASE("engine scores match the offline path exactly") {
  const auto& f = fixture();
  const auto& engine = *f.engine;
  ScoreRequest req;
  req.query_text = f.corpus.queries[3].text;
  req.query_id = f.corpus.queries[3].query_id;
  for (std::size_t i = 0; i < 40; ++i) req.pin_ids.push_back(f.corpus.pins[i * 7].pin_id);
  req.pin_ids.insert(req.pin_ids.begin() + 5, "missing-pin");
  const auto resp = engine.score(req);
  REQUIRE(resp.results.size() == 40);
  CHECK(resp.skipped == std::vector<std::string>{"missing-pin"});
  for (std::size_t i = 0; i < 40; ++i) {
    const auto& pin = f.corpus.pins[i * 7];
    CHECK(resp.results[i].pin_id == pin.pin_id);
    const auto fv = features::assemble_features(f.corpus.queries[3], pin, engine.index(),
                                                engine.model().layout);
    const auto offline = student::student_forward(engine.model(), fv);
    CHECK(resp.results[i].probs == offline);
    CHECK(resp.results[i].relevance_score == offline.expected_gain());
  }
}

TEST_CASE("unknown query id falls back to zero embedding") {
  const auto& engine = *fixture().engine;
  const auto q = engine.resolve_query("red dress", std::string("nope"));
  CHECK(q.text == "red dress");
  CHECK_FALSE(q.query_embedding.has_value());
}

TEST_CASE("service config validation names the missing artifact") {
  ServiceConfig c;
  c.student_checkpoint = "/nonexistent/student.ckpt";
  c.bm25_index = "/nonexistent/idx.json";
  c.pin_store = "/nonexistent/pins.jsonl";
  try {
    c.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/student.ckpt") != std::string::npos);
  }
  c.max_batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  const auto back = service_config_from_json(to_json(RunningServer::config(7)));
  CHECK(back.max_batch_size == 7);
  CHECK(back.port == 0);
}

TEST_CASE("HTTP endpoints") {
  const auto& f = fixture();
  RunningServer srv(50);
  auto cli = srv.client();

  auto res = cli.Get("/healthz");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["status"] == "ok");

  res = cli.Post("/v1/score", score_body("red", {}).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["results"].empty());

  const std::string known = f.corpus.pins[0].pin_id;
  res = cli.Post("/v1/score", score_body("red", {known, "missing"}).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  auto body = json::parse(res->body);
  REQUIRE(body["results"].size() == 1);
  CHECK(body["results"][0]["pin_id"] == known);
  CHECK(body["results"][0]["probs"].size() == 5);
  CHECK(body["skipped"] == json::array({"missing"}));

  res = cli.Post("/v1/score", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body).contains("error"));

  res = cli.Post("/v1/score", R"({"pin_ids":[]})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = cli.Post("/v1/score", score_body("red", std::vector<std::string>(51, known)).dump(),
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body)["error"].get<std::string>().find("max_batch_size") !=
        std::string::npos);

  res = cli.Get("/stats");
  REQUIRE(res);
  body = json::parse(res->body);
  CHECK(body["request_count"] == 2);
  CHECK(body["latency_p50_ms"].get<double>() <= body["latency_p99_ms"].get<double>());
}

TEST_CASE("HTTP responses are deterministic and match the engine") {
  const auto& f = fixture();
  RunningServer srv;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 100; ++i) ids.push_back(f.corpus.pins[i].pin_id);
  const auto req = score_body(f.corpus.queries[0].text, ids);

  auto cli = srv.client();
  const auto first = cli.Post("/v1/score", req.dump(), "application/json");
  const auto second = cli.Post("/v1/score", req.dump(), "application/json");
  REQUIRE(first);
  REQUIRE(second);
  CHECK(first->body == second->body);

  const auto offline = f.engine->score(parse_score_request(req));
  const auto body = json::parse(first->body);
  REQUIRE(body["results"].size() == offline.results.size());
  double max_diff = 0;
  for (std::size_t i = 0; i < offline.results.size(); ++i) {
    for (std::size_t c = 0; c < 5; ++c) {
      max_diff = std::max(max_diff, std::abs(body["results"][i]["probs"][c].get<double>() -
                                             offline.results[i].probs[c]));
    }
  }
  CHECK(max_diff <= 1e-9);

  // Concurrent clients see the sequential answers.
  std::vector<std::future<std::string>> futures;
  for (std::size_t t = 0; t < 8; ++t) {
    futures.push_back(std::async(std::launch::async, [&, t] {
      auto c = srv.client();
      const auto q = score_body(f.corpus.queries[t].text, ids);
      auto r = c.Post("/v1/score", q.dump(), "application/json");
      return r ? r->body : std::string();
    }));
  }
  for (std::size_t t = 0; t < 8; ++t) {
    const auto expected = to_json(f.engine->score(parse_score_request(
                                      score_body(f.corpus.queries[t].text, ids))))
                              .dump();
    CHECK(futures[t].get() == expected);
  }
}

TEST_CASE("CLI exit codes") {
  CHECK(call_cli({}) != 0);
  CHECK(call_cli({"no-such-command"}) != 0);
  testing::TempDir dir;
  const auto missing = (dir / "absent.ckpt").string();
  CHECK(call_cli({"--workspace", dir.path().string(), "eval", "--checkpoint", missing}) == 1);
}
