#include "relevance/student.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "relevance/util/rng.hpp"

namespace relevance::student {

using features::kNumFlags;
using features::kNumScalars;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// --- model ------------------------------------------------------------------

StudentModel::StudentModel(features::FeatureLayout layout_in, const StudentModelConfig& config,
                           std::uint64_t seed)
    : layout(std::move(layout_in)),
      num_w({kNumScalars, config.num_dim}),
      num_v({kNumScalars, config.num_dim}) {
  if (config.num_dim == 0 || config.hidden1 == 0 || config.hidden2 == 0 ||
      (config.cat_dim == 0 && !layout.categoricals.empty())) {
    throw ValidationError("student dimensions must be positive");
  }
  layout_hash = layout.fingerprint();
  Rng rng(seed);
  nn::glorot_uniform(num_w, 1, config.num_dim, rng);
  for (const auto& spec : layout.categoricals) {
    nn::Tensor table({spec.table_rows(), config.cat_dim});
    nn::glorot_uniform(table, 1, config.cat_dim, rng);
    cat_tables.push_back(std::move(table));
  }
  trunk.emplace_back(input_dim(), config.hidden1);
  trunk.emplace_back(config.hidden1, config.hidden2);
  trunk.emplace_back(config.hidden2, corpus::kNumLevels);
  for (auto& layer : trunk) layer.init(rng);
}

std::size_t StudentModel::input_dim() const {
  return layout.query_dim + layout.pin_dim + kNumScalars * num_dim() +
         layout.categoricals.size() * cat_dim() + kNumFlags;
}

void StudentModel::validate() const {
  if (layout_hash != layout.fingerprint()) throw ShapeError("student layout hash is stale");
  if (num_w.rank() != 2 || num_w.rows() != kNumScalars || num_v.shape() != num_w.shape()) {
    throw ShapeError("numerical embeddings must be [13 x d_num]");
  }
  if (cat_tables.size() != layout.categoricals.size()) {
    throw ShapeError("one categorical table per attribute is required");
  }
  for (std::size_t a = 0; a < cat_tables.size(); ++a) {
    if (cat_tables[a].rank() != 2 || cat_tables[a].rows() != layout.categoricals[a].table_rows() ||
        cat_tables[a].cols() != cat_dim()) {
      throw ShapeError("categorical table for '" + layout.categoricals[a].name +
                       "' has the wrong shape");
    }
  }
  if (trunk.size() != 3) throw ShapeError("student trunk must have three dense layers");
  std::size_t width = input_dim();
  for (const auto& layer : trunk) {
    if (layer.in_dim() != width || layer.bias.size() != layer.out_dim()) {
      throw ShapeError("student trunk layers do not chain");
    }
    width = layer.out_dim();
  }
  if (width != static_cast<std::size_t>(corpus::kNumLevels)) {
    throw ShapeError("student trunk must end in 5 logits");
  }
}

std::vector<nn::Tensor*> StudentModel::parameters() {
  std::vector<nn::Tensor*> p{&num_w, &num_v};
  for (auto& t : cat_tables) p.push_back(&t);
  for (auto& layer : trunk) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

std::vector<const nn::Tensor*> StudentModel::parameters() const {
  std::vector<const nn::Tensor*> p{&num_w, &num_v};
  for (const auto& t : cat_tables) p.push_back(&t);
  for (const auto& layer : trunk) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

std::vector<std::string> StudentModel::parameter_names() const {
  std::vector<std::string> names{"num_w", "num_v"};
  for (const auto& spec : layout.categoricals) names.push_back("cat." + spec.name);
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    names.push_back("trunk." + std::to_string(i) + ".weight");
    names.push_back("trunk." + std::to_string(i) + ".bias");
  }
  return names;
}

std::size_t StudentModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : parameters()) n += t->size();
  return n;
}

StudentGrads::StudentGrads(const StudentModel& model)
    : d_num_w(model.num_w.shape()), d_num_v(model.num_v.shape()) {
  for (const auto& t : model.cat_tables) d_cat.emplace_back(t.shape());
  for (const auto& layer : model.trunk) trunk.emplace_back(layer);
}

void StudentGrads::zero() {
  d_num_w.fill(0.0);
  d_num_v.fill(0.0);
  for (auto& t : d_cat) t.fill(0.0);
  for (auto& g : trunk) g.zero();
}

std::vector<const nn::Tensor*> StudentGrads::tensors() const {
  std::vector<const nn::Tensor*> t{&d_num_w, &d_num_v};
  for (const auto& c : d_cat) t.push_back(&c);
  for (const auto& g : trunk) {
    t.push_back(&g.d_weight);
    t.push_back(&g.d_bias);
  }
  return t;
}

// --- forward / backward -----------------------------------------------------

namespace {

void check_features(const StudentModel& model, const features::StudentFeatureVector& fv) {
  if (fv.layout_fingerprint != model.layout_hash) {
    throw ValidationError("feature vector layout " + hex64(fv.layout_fingerprint) +
                          " does not match the model layout " + hex64(model.layout_hash));
  }
  if (fv.query_embedding.size() != model.layout.query_dim ||
      fv.pin_embedding.size() != model.layout.pin_dim ||
      fv.categorical_ids.size() != model.cat_tables.size()) {
    throw ValidationError("feature vector dimensions do not match the model layout");
  }
  for (std::size_t a = 0; a < fv.categorical_ids.size(); ++a) {
    const auto id = fv.categorical_ids[a];
    if (id < 0 || static_cast<std::size_t>(id) >= model.cat_tables[a].rows()) {
      throw ValidationError("categorical id out of range for '" +
                            model.layout.categoricals[a].name + "'");
    }
  }
}

struct Activations {
  std::vector<double> input;
  std::vector<double> z1, a1, z2, a2;
  nn::Logits logits{};
};

Activations forward(const StudentModel& model, const features::StudentFeatureVector& fv) {
  Activations act;
  act.input = student_input(model, fv);
  act.z1 = nn::dense_forward(model.trunk[0], act.input);
  act.a1 = nn::relu_forward(act.z1);
  act.z2 = nn::dense_forward(model.trunk[1], act.a1);
  act.a2 = nn::relu_forward(act.z2);
  const auto out = nn::dense_forward(model.trunk[2], act.a2);
  std::copy(out.begin(), out.end(), act.logits.begin());
  return act;
}

}  // namespace

std::vector<double> student_input(const StudentModel& model,
                                  const features::StudentFeatureVector& fv) {
  check_features(model, fv);
  std::vector<double> x;
  x.reserve(model.input_dim());
  x.insert(x.end(), fv.query_embedding.begin(), fv.query_embedding.end());
  x.insert(x.end(), fv.pin_embedding.begin(), fv.pin_embedding.end());
  const auto scalars = fv.scalars();
  const std::size_t d = model.num_dim();
  for (std::size_t i = 0; i < kNumScalars; ++i) {
    const auto w = model.num_w.row(i);
    const auto v = model.num_v.row(i);
    for (std::size_t k = 0; k < d; ++k) x.push_back(scalars[i] * w[k] + v[k]);
  }
  for (std::size_t a = 0; a < model.cat_tables.size(); ++a) {
    const auto row = model.cat_tables[a].row(static_cast<std::size_t>(fv.categorical_ids[a]));
    x.insert(x.end(), row.begin(), row.end());
  }
  for (auto flag : fv.flags) x.push_back(static_cast<double>(flag));
  return x;
}

nn::Logits student_logits(const StudentModel& model, const features::StudentFeatureVector& fv) {
  return forward(model, fv).logits;
}

corpus::SoftLabel student_forward(const StudentModel& model,
                                  const features::StudentFeatureVector& fv) {
  const auto q = nn::softmax(student_logits(model, fv));
  double total = 0.0;
  for (double p : q) total += p;
  std::array<double, corpus::kNumLevels> p{};
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = q[c] / total;
  return corpus::SoftLabel(p);
}

double student_loss_and_grad(const StudentModel& model, const features::StudentFeatureVector& fv,
                             const corpus::SoftLabel& target, double weight, StudentGrads& grads) {
  const Activations act = forward(model, fv);
  const auto xent = nn::softmax_xent(act.logits, target);
  std::array<double, corpus::kNumLevels> dlogits{};
  for (std::size_t c = 0; c < dlogits.size(); ++c) dlogits[c] = weight * xent.dlogits[c];

  std::vector<double> da2(act.a2.size());
  nn::dense_backward_accumulate(model.trunk[2], act.a2, dlogits, da2, grads.trunk[2]);
  const auto dz2 = nn::relu_backward(act.z2, da2);
  std::vector<double> da1(act.a1.size());
  nn::dense_backward_accumulate(model.trunk[1], act.a1, dz2, da1, grads.trunk[1]);
  const auto dz1 = nn::relu_backward(act.z1, da1);
  std::vector<double> dx(act.input.size());
  nn::dense_backward_accumulate(model.trunk[0], act.input, dz1, dx, grads.trunk[0]);

  std::size_t offset = model.layout.query_dim + model.layout.pin_dim;
  const auto scalars = fv.scalars();
  const std::size_t d = model.num_dim();
  for (std::size_t i = 0; i < kNumScalars; ++i) {
    auto gw = grads.d_num_w.row(i);
    auto gv = grads.d_num_v.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      gw[k] += dx[offset + k] * scalars[i];
      gv[k] += dx[offset + k];
    }
    offset += d;
  }
  const std::size_t dc = model.cat_dim();
  for (std::size_t a = 0; a < model.cat_tables.size(); ++a) {
    auto row = grads.d_cat[a].row(static_cast<std::size_t>(fv.categorical_ids[a]));
    for (std::size_t k = 0; k < dc; ++k) row[k] += dx[offset + k];
    offset += dc;
  }
  return xent.loss;
}

// --- training ---------------------------------------------------------------

void StudentTrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || model.num_dim == 0 || model.cat_dim == 0 ||
      model.hidden1 == 0 || model.hidden2 == 0) {
    throw ValidationError("student training counts must be positive");
  }
  if (!(adam.lr > 0.0)) throw ValidationError("student learning rate must be positive");
}

json to_json(const StudentTrainConfig& c) {
  return json{{"epochs", c.epochs},       {"batch_size", c.batch_size},
              {"seed", c.seed},           {"adam", nn::to_json(c.adam)},
              {"patience", c.patience},   {"num_dim", c.model.num_dim},
              {"cat_dim", c.model.cat_dim}, {"hidden1", c.model.hidden1},
              {"hidden2", c.model.hidden2}};
}

StudentTrainConfig student_config_from_json(const json& j) {
  StudentTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("adam")) c.adam = nn::adam_config_from_json(j.at("adam"));
  c.patience = j.value("patience", c.patience);
  c.model.num_dim = j.value("num_dim", c.model.num_dim);
  c.model.cat_dim = j.value("cat_dim", c.model.cat_dim);
  c.model.hidden1 = j.value("hidden1", c.model.hidden1);
  c.model.hidden2 = j.value("hidden2", c.model.hidden2);
  c.validate();
  return c;
}

double distillation_loss(const StudentModel& model, std::span<const DistilledExample> set) {
  if (set.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : set) total += nn::xent_loss(student_logits(model, ex.features), ex.label);
  return total / static_cast<double>(set.size());
}

namespace {

std::string norm_report(const StudentModel& model) {
  std::ostringstream out;
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out << (i ? ", " : "") << names[i] << "=" << std::sqrt(params[i]->squared_norm());
  }
  return out.str();
}

}  // namespace

TrainedStudent train_student(std::span<const DistilledExample> train,
                             std::span<const DistilledExample> valid,
                             const features::FeatureLayout& layout,
                             const StudentTrainConfig& config,
                             const std::function<void(const StudentEpochStats&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw ValidationError("distilled training set is empty");

  TrainedStudent result;
  result.model = StudentModel(layout, config.model, config.seed);
  StudentModel& model = result.model;
  const auto monitor = valid.empty() ? train : valid;
  result.initial_valid_loss = distillation_loss(model, monitor);

  StudentGrads grads(model);
  auto params = model.parameters();
  auto grad_tensors = grads.tensors();
  nn::AdamState adam(config.adam, std::vector<const nn::Tensor*>(params.begin(), params.end()));

  Rng order_rng(config.seed ^ 0x0dd5eedULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  StudentModel best = model;
  double best_loss = result.initial_valid_loss;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      grads.zero();
      double batch_loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const auto& ex = train[order[k]];
          batch_loss += student_loss_and_grad(model, ex.features, ex.label, w, grads);
        }
      } catch (const nn::NonFiniteValue&) {
        batch_loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(batch_loss)) {
        throw nn::TrainingDiverged("student loss became non-finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index) +
                                   "; parameter norms: " + norm_report(model));
      }
      loss_sum += batch_loss;
      adam.step(params, grad_tensors);
    }

    StudentEpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    stats.valid_loss = distillation_loss(model, monitor);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.valid_loss < best_loss) {
      best_loss = stats.valid_loss;
      best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

// --- persistence ------------------------------------------------------------

void save_student(const std::filesystem::path& path, const StudentModel& model,
                  const json& extra_metadata) {
  model.validate();
  nn::Checkpoint ckpt;
  ckpt.metadata = extra_metadata;
  ckpt.metadata["kind"] = "student";
  ckpt.metadata["layout"] = features::to_json(model.layout);
  ckpt.metadata["layout_hash"] = hex64(model.layout_hash);
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.tensors.emplace_back(names[i], *params[i]);
  nn::save_checkpoint(path, ckpt);
}

StudentModel load_student(const std::filesystem::path& path,
                          const features::FeatureLayout* expected_layout) {
  const auto ckpt = nn::load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "student") {
    throw CheckpointError("'" + path.string() + "' is not a student checkpoint");
  }
  StudentModel model;
  try {
    model.layout = features::layout_from_json(ckpt.metadata.at("layout"));
  } catch (const Error& e) {
    throw CheckpointError("student checkpoint layout is unreadable: " + std::string(e.what()));
  }
  model.layout_hash = model.layout.fingerprint();
  if (ckpt.metadata.value("layout_hash", "") != hex64(model.layout_hash)) {
    throw CheckpointError("student checkpoint layout hash does not match its layout");
  }
  if (expected_layout != nullptr && expected_layout->fingerprint() != model.layout_hash) {
    throw CheckpointError("student checkpoint layout " + hex64(model.layout_hash) +
                          " differs from the expected layout " +
                          hex64(expected_layout->fingerprint()));
  }
  try {
    model.num_w = ckpt.get("num_w");
    model.num_v = ckpt.get("num_v");
    for (const auto& spec : model.layout.categoricals) {
      model.cat_tables.push_back(ckpt.get("cat." + spec.name));
    }
    for (std::size_t i = 0; i < 3; ++i) {
      nn::DenseLayer layer;
      layer.weight = ckpt.get("trunk." + std::to_string(i) + ".weight");
      layer.bias = ckpt.get("trunk." + std::to_string(i) + ".bias");
      model.trunk.push_back(std::move(layer));
    }
    model.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError("student checkpoint is inconsistent: " + std::string(e.what()));
  }
  return model;
}

}  // namespace relevance::student
