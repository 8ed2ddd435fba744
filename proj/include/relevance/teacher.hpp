#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/evalmetrics.hpp"
#include "relevance/neuralcore.hpp"
#include "relevance/textrep.hpp"

namespace relevance::teacher {

struct TeacherModelConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
};

/// Joint query/pin encoder: mean of (token + segment) embeddings over the
/// whole sequence, then a dense head with ReLU between layers and 5 logits.
struct CrossEncoderModel {
  nn::Tensor token_embedding;    // [V x d]
  nn::Tensor segment_embedding;  // [2 x d]
  std::vector<nn::DenseLayer> head;

  CrossEncoderModel() = default;

  /// Two-layer head d -> hidden -> 5, Glorot-initialized from `seed`.
  CrossEncoderModel(std::size_t vocab_size, const TeacherModelConfig& config, std::uint64_t seed);

  std::size_t vocab_size() const { return token_embedding.rows(); }
  std::size_t embed_dim() const { return token_embedding.cols(); }

  /// Checks the embedding/head chain and the 5-way output.
  void validate() const;

  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
};

/// Gradient buffers shaped like a model's parameters.
struct TeacherGrads {
  nn::Tensor d_token;
  nn::Tensor d_segment;
  std::vector<nn::DenseGrads> head;

  explicit TeacherGrads(const CrossEncoderModel& model);
  void zero();
  std::vector<const nn::Tensor*> tensors() const;
};

nn::Logits teacher_logits(const CrossEncoderModel& model, const textrep::TokenSeq& seq);

corpus::SoftLabel teacher_forward(const CrossEncoderModel& model, const textrep::TokenSeq& seq);

/// Adds `weight` times the gradient of the cross-entropy at `seq` into
/// `grads` and returns the (unweighted) loss.
double teacher_loss_and_grad(const CrossEncoderModel& model, const textrep::TokenSeq& seq,
                             const corpus::SoftLabel& target, double weight, TeacherGrads& grads);

struct TeacherExample {
  textrep::TokenSeq seq;
  corpus::SoftLabel label;
};

struct TeacherTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::uint64_t seed = 17;
  std::size_t max_len = 64;
  nn::AdamConfig adam{.lr = 3e-3};
  std::size_t patience = 3;
  TeacherModelConfig model;

  void validate() const;
};

nlohmann::json to_json(const TeacherTrainConfig& config);
TeacherTrainConfig teacher_config_from_json(const nlohmann::json& j);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
};

struct TrainedTeacher {
  CrossEncoderModel model;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch Adam on soft-label cross-entropy. Keeps the epoch with the best
/// validation accuracy and stops after `patience` epochs without improvement.
/// Throws TrainingDiverged on a non-finite loss.
TrainedTeacher train_teacher(std::span<const TeacherExample> train,
                             std::span<const TeacherExample> valid, std::size_t vocab_size,
                             const TeacherTrainConfig& config, const EpochCallback& on_epoch = {});

using nn::TrainingDiverged;

/// Anything that maps a (query, pin) pair to a relevance distribution.
class TeacherScorer {
 public:
  virtual ~TeacherScorer() = default;
  virtual corpus::SoftLabel score(std::string_view query_text,
                                  const corpus::PinDocument& pin) const = 0;
};

/// Query tokens -> ids, impute the pin, assemble its text, join, forward.
textrep::TokenSeq encode_pair(std::string_view query_text, const corpus::PinDocument& pin,
                              const textrep::Vocabulary& vocab,
                              const textrep::TextRepConfig& config);

corpus::SoftLabel predict_distribution(const CrossEncoderModel& model,
                                       const corpus::QueryRecord& query,
                                       const corpus::PinDocument& pin,
                                       const textrep::Vocabulary& vocab,
                                       const textrep::TextRepConfig& config);

class CrossEncoderScorer final : public TeacherScorer {
 public:
  CrossEncoderScorer(CrossEncoderModel model, textrep::Vocabulary vocab,
                     textrep::TextRepConfig config);

  corpus::SoftLabel score(std::string_view query_text,
                          const corpus::PinDocument& pin) const override;

  const CrossEncoderModel& model() const { return model_; }
  const textrep::Vocabulary& vocab() const { return vocab_; }
  const textrep::TextRepConfig& text_config() const { return config_; }

 private:
  CrossEncoderModel model_;
  textrep::Vocabulary vocab_;
  textrep::TextRepConfig config_;
};

eval::EvalReport eval_teacher(const CrossEncoderModel& model,
                              std::span<const TeacherExample> test);

/// Checkpoint metadata carries the text config and the vocabulary
/// fingerprint; loading against a different vocabulary fails.
void save_teacher(const std::filesystem::path& path, const CrossEncoderModel& model,
                  const textrep::TextRepConfig& text_config, const textrep::Vocabulary& vocab,
                  const nlohmann::json& extra_metadata = nlohmann::json::object());

struct LoadedTeacher {
  CrossEncoderModel model;
  textrep::TextRepConfig text_config;
  nlohmann::json metadata;
};

LoadedTeacher load_teacher(const std::filesystem::path& path, const textrep::Vocabulary& vocab);

}  // namespace relevance::teacher
