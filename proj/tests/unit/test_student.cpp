#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "relevance/student.hpp"
#include "test_support.hpp"

using namespace relevance;
using namespace relevance::student;
using features::FeatureLayout;
using features::StudentFeatureVector;

namespace {

FeatureLayout small_layout() {
  FeatureLayout layout;
  layout.query_dim = 3;
  layout.pin_dim = 2;
  layout.categoricals = {{"domain", {"a.example", "b.example"}}, {"format", {"image", "video"}}};
  return layout;
}

StudentFeatureVector random_features(const FeatureLayout& layout, Rng& rng) {
  StudentFeatureVector fv;
  fv.layout_fingerprint = layout.fingerprint();
  fv.query_embedding.resize(layout.query_dim);
  fv.pin_embedding.resize(layout.pin_dim);
  for (double& v : fv.query_embedding) v = rng.normal();
  for (double& v : fv.pin_embedding) v = rng.normal();
  for (double& v : fv.bm25) v = rng.uniform(0, 4);
  for (double& v : fv.overlap) v = rng.uniform();
  fv.engagement_rate = rng.uniform(0, 0.2);
  for (auto& f : fv.flags) f = rng.bernoulli(0.8) ? 1 : 0;
  for (const auto& spec : layout.categoricals) {
    fv.categorical_ids.push_back(static_cast<std::int32_t>(rng.below(spec.table_rows())));
  }
  return fv;
}

corpus::SoftLabel peaked(int level) {
  std::array<double, 5> p{};
  p.fill(0.05);
  p[static_cast<std::size_t>(level - 1)] = 0.8;
  return corpus::SoftLabel(p);
}

// Teacher whose label is five tiers of the title overlap.
std::vector<DistilledExample> tier_dataset(const FeatureLayout& layout, std::size_t n,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DistilledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto fv = random_features(layout, rng);
    const double x = fv.overlap[static_cast<std::size_t>(textrep::FieldFamily::kTitle)];
    const int level = 1 + std::min(4, static_cast<int>(x * 5.0));
    out.push_back({fv, peaked(level)});
  }
  return out;
}

StudentTrainConfig fast_config() {
  StudentTrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.adam.lr = 3e-3;
  cfg.patience = 30;
  cfg.model.hidden1 = 64;
  cfg.model.hidden2 = 32;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST_CASE("zero weights give the uniform distribution") {
  auto model = StudentModel(small_layout(), {}, 1);
  for (auto* t : model.parameters()) t->fill(0.0);
  Rng rng(2);
  const auto p = student_forward(model, random_features(model.layout, rng));
  for (double v : p.probs()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("hand-set tiny model") {
  FeatureLayout layout;
  StudentModel model(layout, {.num_dim = 1, .cat_dim = 1, .hidden1 = 1, .hidden2 = 1}, 1);
  for (auto* t : model.parameters()) t->fill(0.0);
  model.num_w(0, 0) = 1.0;  // caption bm25 passes through
  model.trunk[0].weight(0, 0) = 1.0;
  model.trunk[1].weight(0, 0) = 1.0;
  model.trunk[2].weight(0, 0) = 1.0;
  model.trunk[2].weight(4, 0) = -1.0;
  StudentFeatureVector fv;
  fv.layout_fingerprint = layout.fingerprint();
  fv.bm25[0] = 2.0;
  const auto logits = student_logits(model, fv);
  CHECK(logits == nn::Logits{2.0, 0.0, 0.0, 0.0, -2.0});
  const auto p = student_forward(model, fv);
  const double z = std::exp(2.0) + 3.0 + std::exp(-2.0);
  CHECK(p[0] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));
  CHECK(p[4] == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-14));
}

TEST_CASE("student input follows the documented order") {
  const auto layout = small_layout();
  const StudentModel model(layout, {.num_dim = 2, .cat_dim = 3, .hidden1 = 4, .hidden2 = 4}, 7);
  Rng rng(5);
  const auto fv = random_features(layout, rng);
  const auto x = student_input(model, fv);
  REQUIRE(x.size() == model.input_dim());
  CHECK(x.size() == 3 + 2 + 13 * 2 + 2 * 3 + 3);
  CHECK(x[0] == fv.query_embedding[0]);
  CHECK(x[3] == fv.pin_embedding[0]);
  const auto s = fv.scalars();
  CHECK(x[5] == s[0] * model.num_w(0, 0) + model.num_v(0, 0));
  CHECK(x[6] == s[0] * model.num_w(0, 1) + model.num_v(0, 1));
  const auto cat0 = model.cat_tables[0].row(static_cast<std::size_t>(fv.categorical_ids[0]));
  CHECK(x[31] == cat0[0]);
  CHECK(x[x.size() - 1] == static_cast<double>(fv.flags[2]));
}

TEST_CASE("student output is valid for random inputs") {
  const StudentModel model(small_layout(), {}, 3);
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto p = student_forward(model, random_features(model.layout, rng));
    double s = 0;
    for (double v : p.probs()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("student rejects features from another layout") {
  const StudentModel model(small_layout(), {}, 3);
  Rng rng(8);
  auto fv = random_features(model.layout, rng);
  fv.layout_fingerprint ^= 1;
  CHECK_THROWS_AS(student_forward(model, fv), ValidationError);
  fv = random_features(model.layout, rng);
  fv.pin_embedding.push_back(0.0);
  CHECK_THROWS_AS(student_forward(model, fv), ValidationError);
  fv = random_features(model.layout, rng);
  fv.categorical_ids[0] = 99;
  CHECK_THROWS_AS(student_forward(model, fv), ValidationError);
}

TEST_CASE("student analytic gradients match finite differences") {
  StudentModel model(small_layout(), {.num_dim = 3, .cat_dim = 2, .hidden1 = 9, .hidden2 = 6}, 13);
  Rng rng(21);
  for (auto& layer : model.trunk) {
    for (double& b : layer.bias.data()) b = rng.uniform(-0.3, 0.3);
  }
  for (double& v : model.num_v.data()) v = rng.uniform(-0.5, 0.5);
  std::vector<DistilledExample> batch;
  for (int i = 0; i < 6; ++i) batch.push_back({random_features(model.layout, rng), peaked(1 + i % 5)});
  StudentGrads grads(model);
  grads.zero();
  for (const auto& ex : batch) student_loss_and_grad(model, ex.features, ex.label, 1.0 / 6.0, grads);
  auto loss = [&] { return distillation_loss(model, batch); };
  const auto params = model.parameters();
  const auto report = nn::grad_check(loss, params, grads.tensors(), 1e-5, 200, 6);
  CHECK(report.probes == 200);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("student learns a tiered teacher") {
  const auto layout = small_layout();
  const auto train = tier_dataset(layout, 4000, 1);
  const auto valid = tier_dataset(layout, 500, 2);
  const auto test = tier_dataset(layout, 1000, 3);
  const auto trained = train_student(train, valid, layout, fast_config());
  std::size_t agree = 0;
  for (const auto& ex : test) {
    agree += student_forward(trained.model, ex.features).argmax_level() == ex.label.argmax_level();
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(test.size()) >= 0.95);
  CHECK(trained.history.size() >= 1);
  CHECK(distillation_loss(trained.model, valid) < trained.initial_valid_loss);
}

TEST_CASE("student training is deterministic and checkpoints round trip") {
  const auto layout = small_layout();
  const auto train = tier_dataset(layout, 300, 1);
  const auto valid = tier_dataset(layout, 60, 2);
  auto cfg = fast_config();
  cfg.epochs = 2;
  const auto a = train_student(train, valid, layout, cfg);
  const auto b = train_student(train, valid, layout, cfg);
  testing::TempDir dir;
  save_student(dir / "a.ckpt", a.model);
  save_student(dir / "b.ckpt", b.model);
  const auto bytes = testing::read_file(dir / "a.ckpt");
  CHECK(bytes == testing::read_file(dir / "b.ckpt"));

  const auto loaded = load_student(dir / "a.ckpt", &layout);
  Rng rng(17);
  double max_diff = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto fv = random_features(layout, rng);
    const auto p = student_forward(a.model, fv);
    const auto q = student_forward(loaded, fv);
    for (std::size_t c = 0; c < 5; ++c) max_diff = std::max(max_diff, std::abs(p[c] - q[c]));
  }
  CHECK(max_diff == 0.0);

  dir.write("cut.ckpt", bytes.substr(0, bytes.size() - 20));
  CHECK_THROWS_AS(load_student(dir / "cut.ckpt"), CheckpointError);
  dir.write("empty.ckpt", "");
  CHECK_THROWS_AS(load_student(dir / "empty.ckpt"), CheckpointError);

  auto other = layout;
  other.pin_dim = 4;
  CHECK_THROWS_AS(load_student(dir / "a.ckpt", &other), CheckpointError);
}

TEST_CASE("student config JSON and validation") {
  StudentTrainConfig cfg;
  cfg.epochs = 4;
  cfg.model.hidden1 = 32;
  const auto back = student_config_from_json(to_json(cfg));
  CHECK(back.epochs == 4);
  CHECK(back.model.hidden1 == 32);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
