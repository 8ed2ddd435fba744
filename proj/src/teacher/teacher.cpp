#include "relevance/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "relevance/util/rng.hpp"

namespace relevance::teacher {

using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// --- model ------------------------------------------------------------------

CrossEncoderModel::CrossEncoderModel(std::size_t vocab_size, const TeacherModelConfig& config,
                                     std::uint64_t seed)
    : token_embedding({vocab_size, config.embed_dim}),
      segment_embedding({2, config.embed_dim}) {
  Rng rng(seed);
  nn::glorot_uniform(token_embedding, vocab_size, config.embed_dim, rng);
  nn::glorot_uniform(segment_embedding, 2, config.embed_dim, rng);
  head.emplace_back(config.embed_dim, config.hidden_dim);
  head.emplace_back(config.hidden_dim, corpus::kNumLevels);
  for (auto& layer : head) layer.init(rng);
}

void CrossEncoderModel::validate() const {
  if (token_embedding.rank() != 2 || segment_embedding.rank() != 2) {
    throw ShapeError("teacher embeddings must be matrices");
  }
  if (segment_embedding.rows() != 2 || segment_embedding.cols() != embed_dim()) {
    throw ShapeError("segment embedding must be [2 x d]");
  }
  if (head.empty()) throw ShapeError("teacher head has no layers");
  std::size_t width = embed_dim();
  for (const auto& layer : head) {
    if (layer.in_dim() != width) throw ShapeError("teacher head layers do not chain");
    width = layer.out_dim();
  }
  if (width != static_cast<std::size_t>(corpus::kNumLevels)) {
    throw ShapeError("teacher head must end in 5 logits");
  }
}

std::vector<nn::Tensor*> CrossEncoderModel::parameters() {
  std::vector<nn::Tensor*> p{&token_embedding, &segment_embedding};
  for (auto& layer : head) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

std::vector<const nn::Tensor*> CrossEncoderModel::parameters() const {
  std::vector<const nn::Tensor*> p{&token_embedding, &segment_embedding};
  for (const auto& layer : head) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

std::vector<std::string> CrossEncoderModel::parameter_names() const {
  std::vector<std::string> names{"token_embedding", "segment_embedding"};
  for (std::size_t i = 0; i < head.size(); ++i) {
    names.push_back("head." + std::to_string(i) + ".weight");
    names.push_back("head." + std::to_string(i) + ".bias");
  }
  return names;
}

TeacherGrads::TeacherGrads(const CrossEncoderModel& model)
    : d_token(model.token_embedding.shape()), d_segment(model.segment_embedding.shape()) {
  for (const auto& layer : model.head) head.emplace_back(layer);
}

void TeacherGrads::zero() {
  d_token.fill(0.0);
  d_segment.fill(0.0);
  for (auto& g : head) g.zero();
}

std::vector<const nn::Tensor*> TeacherGrads::tensors() const {
  std::vector<const nn::Tensor*> t{&d_token, &d_segment};
  for (const auto& g : head) {
    t.push_back(&g.d_weight);
    t.push_back(&g.d_bias);
  }
  return t;
}

// --- forward / backward -----------------------------------------------------

namespace {

struct Activations {
  std::vector<double> pooled;
  std::vector<std::vector<double>> pre;  // per head layer, before ReLU
  std::vector<std::vector<double>> post; // per hidden layer, after ReLU
  nn::Logits logits{};
};

void check_sequence(const CrossEncoderModel& model, const textrep::TokenSeq& seq) {
  if (seq.tokens.empty()) throw ValidationError("teacher input sequence is empty");
  if (seq.tokens.size() != seq.segment_ids.size()) {
    throw ValidationError("token and segment sequences differ in length");
  }
  const auto v = static_cast<textrep::TokenId>(model.vocab_size());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (seq.tokens[i] < 0 || seq.tokens[i] >= v) {
      throw ValidationError("token id " + std::to_string(seq.tokens[i]) + " outside vocabulary");
    }
    if (seq.segment_ids[i] > 1) throw ValidationError("segment id must be 0 or 1");
  }
}

Activations forward(const CrossEncoderModel& model, const textrep::TokenSeq& seq) {
  check_sequence(model, seq);
  const std::size_t d = model.embed_dim();
  Activations act;
  act.pooled.assign(d, 0.0);
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto e = model.token_embedding.row(static_cast<std::size_t>(seq.tokens[i]));
    const auto s = model.segment_embedding.row(seq.segment_ids[i]);
    for (std::size_t k = 0; k < d; ++k) act.pooled[k] += e[k] + s[k];
  }
  const double inv_len = 1.0 / static_cast<double>(seq.tokens.size());
  for (double& x : act.pooled) x *= inv_len;

  std::span<const double> input = act.pooled;
  act.pre.resize(model.head.size());
  act.post.resize(model.head.size() - 1);
  for (std::size_t l = 0; l < model.head.size(); ++l) {
    act.pre[l] = nn::dense_forward(model.head[l], input);
    if (l + 1 < model.head.size()) {
      act.post[l] = nn::relu_forward(act.pre[l]);
      input = act.post[l];
    }
  }
  std::copy(act.pre.back().begin(), act.pre.back().end(), act.logits.begin());
  return act;
}

}  // namespace

nn::Logits teacher_logits(const CrossEncoderModel& model, const textrep::TokenSeq& seq) {
  return forward(model, seq).logits;
}

corpus::SoftLabel teacher_forward(const CrossEncoderModel& model, const textrep::TokenSeq& seq) {
  const auto q = nn::softmax(teacher_logits(model, seq));
  // Renormalize so rounding never trips the SoftLabel mass check.
  double total = 0.0;
  for (double p : q) total += p;
  std::array<double, corpus::kNumLevels> p{};
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = q[c] / total;
  return corpus::SoftLabel(p);
}

double teacher_loss_and_grad(const CrossEncoderModel& model, const textrep::TokenSeq& seq,
                             const corpus::SoftLabel& target, double weight, TeacherGrads& grads) {
  const Activations act = forward(model, seq);
  const auto xent = nn::softmax_xent(act.logits, target);

  std::vector<double> delta(xent.dlogits.begin(), xent.dlogits.end());
  for (double& g : delta) g *= weight;
  for (std::size_t l = model.head.size(); l-- > 0;) {
    std::span<const double> input =
        l == 0 ? std::span<const double>(act.pooled) : std::span<const double>(act.post[l - 1]);
    std::vector<double> d_input(model.head[l].in_dim());
    nn::dense_backward_accumulate(model.head[l], input, delta, d_input, grads.head[l]);
    if (l > 0) {
      delta.assign(d_input.size(), 0.0);
      nn::relu_backward(act.pre[l - 1], d_input, delta);
    } else {
      delta = std::move(d_input);
    }
  }
  // delta is now d(loss)/d(pooled).
  const std::size_t d = model.embed_dim();
  const double inv_len = 1.0 / static_cast<double>(seq.tokens.size());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    auto de = grads.d_token.row(static_cast<std::size_t>(seq.tokens[i]));
    auto ds = grads.d_segment.row(seq.segment_ids[i]);
    for (std::size_t k = 0; k < d; ++k) {
      de[k] += delta[k] * inv_len;
      ds[k] += delta[k] * inv_len;
    }
  }
  return xent.loss;
}

// --- training ---------------------------------------------------------------

void TeacherTrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || model.embed_dim == 0 || model.hidden_dim == 0) {
    throw ValidationError("teacher training counts must be positive");
  }
  if (max_len < 8) throw ValidationError("teacher max_len must be at least 8");
  if (!(adam.lr > 0.0)) throw ValidationError("teacher learning rate must be positive");
}

json to_json(const TeacherTrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"max_len", c.max_len},
              {"adam", nn::to_json(c.adam)},
              {"patience", c.patience},
              {"embed_dim", c.model.embed_dim},
              {"hidden_dim", c.model.hidden_dim}};
}

TeacherTrainConfig teacher_config_from_json(const json& j) {
  TeacherTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.max_len = j.value("max_len", c.max_len);
  if (j.contains("adam")) c.adam = nn::adam_config_from_json(j.at("adam"));
  c.patience = j.value("patience", c.patience);
  c.model.embed_dim = j.value("embed_dim", c.model.embed_dim);
  c.model.hidden_dim = j.value("hidden_dim", c.model.hidden_dim);
  c.validate();
  return c;
}

namespace {

struct ValidationScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValidationScore score_set(const CrossEncoderModel& model, std::span<const TeacherExample> set) {
  ValidationScore s;
  if (set.empty()) return s;
  std::size_t hits = 0;
  for (const auto& ex : set) {
    const auto logits = teacher_logits(model, ex.seq);
    s.loss += nn::xent_loss(logits, ex.label);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (static_cast<int>(best) + 1 == ex.label.argmax_level()) ++hits;
  }
  s.loss /= static_cast<double>(set.size());
  s.accuracy = static_cast<double>(hits) / static_cast<double>(set.size());
  return s;
}

std::string norm_report(const CrossEncoderModel& model) {
  std::ostringstream out;
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out << (i ? ", " : "") << names[i] << "=" << std::sqrt(params[i]->squared_norm());
  }
  return out.str();
}

}  // namespace

TrainedTeacher train_teacher(std::span<const TeacherExample> train,
                             std::span<const TeacherExample> valid, std::size_t vocab_size,
                             const TeacherTrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ValidationError("teacher training set is empty");

  TrainedTeacher result;
  result.model = CrossEncoderModel(vocab_size, config.model, config.seed);
  CrossEncoderModel& model = result.model;
  TeacherGrads grads(model);
  auto params = model.parameters();
  auto grad_tensors = grads.tensors();
  nn::AdamState adam(config.adam, std::vector<const nn::Tensor*>(params.begin(), params.end()));

  Rng order_rng(config.seed ^ 0x5eedf00dULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  CrossEncoderModel best = model;
  double best_accuracy = -1.0;
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
          batch_loss += teacher_loss_and_grad(model, ex.seq, ex.label, w, grads);
        }
      } catch (const nn::NonFiniteValue&) {
        batch_loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("teacher loss became non-finite at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_index) + "; parameter norms: " +
                               norm_report(model));
      }
      loss_sum += batch_loss;
      adam.step(params, grad_tensors);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    const auto v = valid.empty() ? score_set(model, train) : score_set(model, valid);
    stats.valid_loss = v.loss;
    stats.valid_accuracy = v.accuracy;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (v.accuracy > best_accuracy) {
      best_accuracy = v.accuracy;
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

// --- scoring ----------------------------------------------------------------

textrep::TokenSeq encode_pair(std::string_view query_text, const corpus::PinDocument& pin,
                              const textrep::Vocabulary& vocab,
                              const textrep::TextRepConfig& config) {
  const auto query_ids = vocab.encode(textrep::tokenize(query_text));
  const auto imputed = textrep::impute_title_description(pin);
  const auto pin_ids = textrep::assemble_pin_text(imputed, vocab, config);
  return textrep::build_crossencoder_input(query_ids, pin_ids, config.max_len);
}

corpus::SoftLabel predict_distribution(const CrossEncoderModel& model,
                                       const corpus::QueryRecord& query,
                                       const corpus::PinDocument& pin,
                                       const textrep::Vocabulary& vocab,
                                       const textrep::TextRepConfig& config) {
  return teacher_forward(model, encode_pair(query.text, pin, vocab, config));
}

CrossEncoderScorer::CrossEncoderScorer(CrossEncoderModel model, textrep::Vocabulary vocab,
                                       textrep::TextRepConfig config)
    : model_(std::move(model)), vocab_(std::move(vocab)), config_(std::move(config)) {
  model_.validate();
  if (model_.vocab_size() != vocab_.size()) {
    throw ValidationError("teacher embedding table does not match the vocabulary size");
  }
}

corpus::SoftLabel CrossEncoderScorer::score(std::string_view query_text,
                                            const corpus::PinDocument& pin) const {
  return teacher_forward(model_, encode_pair(query_text, pin, vocab_, config_));
}

eval::EvalReport eval_teacher(const CrossEncoderModel& model,
                              std::span<const TeacherExample> test) {
  std::vector<eval::ScoredExample> scored;
  scored.reserve(test.size());
  for (const auto& ex : test) scored.push_back({teacher_forward(model, ex.seq), ex.label});
  return eval::build_report(scored, {}, {});
}

// --- persistence ------------------------------------------------------------

void save_teacher(const std::filesystem::path& path, const CrossEncoderModel& model,
                  const textrep::TextRepConfig& text_config, const textrep::Vocabulary& vocab,
                  const json& extra_metadata) {
  model.validate();
  nn::Checkpoint ckpt;
  ckpt.metadata = extra_metadata;
  ckpt.metadata["kind"] = "teacher";
  ckpt.metadata["text_config"] = textrep::to_json(text_config);
  ckpt.metadata["vocab_fingerprint"] = hex64(vocab.fingerprint());
  ckpt.metadata["vocab_size"] = vocab.size();
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.tensors.emplace_back(names[i], *params[i]);
  nn::save_checkpoint(path, ckpt);
}

LoadedTeacher load_teacher(const std::filesystem::path& path, const textrep::Vocabulary& vocab) {
  auto ckpt = nn::load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "teacher") {
    throw CheckpointError("'" + path.string() + "' is not a teacher checkpoint");
  }
  if (ckpt.metadata.value("vocab_fingerprint", "") != hex64(vocab.fingerprint())) {
    throw CheckpointError("teacher checkpoint was trained with a different vocabulary");
  }
  LoadedTeacher out;
  out.text_config = textrep::text_config_from_json(ckpt.metadata.at("text_config"));
  out.model.token_embedding = ckpt.get("token_embedding");
  out.model.segment_embedding = ckpt.get("segment_embedding");
  for (std::size_t i = 0;; ++i) {
    const auto prefix = "head." + std::to_string(i);
    const bool present = std::any_of(ckpt.tensors.begin(), ckpt.tensors.end(),
                                     [&](const auto& t) { return t.first == prefix + ".weight"; });
    if (!present) break;
    nn::DenseLayer layer;
    layer.weight = ckpt.get(prefix + ".weight");
    layer.bias = ckpt.get(prefix + ".bias");
    if (layer.weight.rank() != 2 || layer.bias.size() != layer.weight.rows()) {
      throw CheckpointError("teacher head layer " + std::to_string(i) + " is malformed");
    }
    out.model.head.push_back(std::move(layer));
  }
  try {
    out.model.validate();
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("teacher checkpoint is inconsistent: ") + e.what());
  }
  if (out.model.vocab_size() != vocab.size()) {
    throw CheckpointError("teacher embedding table does not match the vocabulary size");
  }
  out.metadata = std::move(ckpt.metadata);
  return out;
}

}  // namespace relevance::teacher
