#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/features.hpp"
#include "relevance/neuralcore.hpp"

namespace relevance::student {

struct StudentModelConfig {
  std::size_t num_dim = 8;  // per scalar feature
  std::size_t cat_dim = 8;  // per categorical attribute
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
};

/// Feed-forward scorer over a StudentFeatureVector.
///
/// Input vector, in order: query embedding, pin embedding, the numerical
/// embedding (x * w_i + v_i) of every scalar, one categorical row per
/// attribute, then the presence flags. Trunk: dense/ReLU, dense/ReLU, dense.
struct StudentModel {
  features::FeatureLayout layout;
  nn::Tensor num_w;  // [kNumScalars x num_dim]
  nn::Tensor num_v;  // [kNumScalars x num_dim]
  std::vector<nn::Tensor> cat_tables;  // per attribute [(values + 1) x cat_dim]
  std::vector<nn::DenseLayer> trunk;
  std::uint64_t layout_hash = 0;  // layout.fingerprint(), cached

  StudentModel() = default;
  StudentModel(features::FeatureLayout layout, const StudentModelConfig& config,
               std::uint64_t seed);

  std::size_t num_dim() const { return num_w.cols(); }
  std::size_t cat_dim() const { return cat_tables.empty() ? 0 : cat_tables.front().cols(); }
  std::size_t input_dim() const;

  void validate() const;

  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
};

struct StudentGrads {
  nn::Tensor d_num_w;
  nn::Tensor d_num_v;
  std::vector<nn::Tensor> d_cat;
  std::vector<nn::DenseGrads> trunk;

  explicit StudentGrads(const StudentModel& model);
  void zero();
  std::vector<const nn::Tensor*> tensors() const;
};

/// The concatenated trunk input for `fv`. Throws ValidationError if the
/// feature vector was assembled under a different layout.
std::vector<double> student_input(const StudentModel& model,
                                  const features::StudentFeatureVector& fv);

nn::Logits student_logits(const StudentModel& model, const features::StudentFeatureVector& fv);

corpus::SoftLabel student_forward(const StudentModel& model,
                                  const features::StudentFeatureVector& fv);

/// Adds `weight` times the gradient of the soft cross-entropy into `grads`;
/// returns the unweighted loss.
double student_loss_and_grad(const StudentModel& model, const features::StudentFeatureVector& fv,
                             const corpus::SoftLabel& target, double weight, StudentGrads& grads);

struct DistilledExample {
  features::StudentFeatureVector features;
  corpus::SoftLabel label;
};

struct StudentTrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 64;
  std::uint64_t seed = 23;
  nn::AdamConfig adam{.lr = 1e-3};
  std::size_t patience = 3;
  StudentModelConfig model;

  void validate() const;
};

nlohmann::json to_json(const StudentTrainConfig& config);
StudentTrainConfig student_config_from_json(const nlohmann::json& j);

struct StudentEpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainedStudent {
  StudentModel model;
  std::vector<StudentEpochStats> history;
  std::size_t best_epoch = 0;
  double initial_valid_loss = 0.0;
};

/// Minibatch Adam on the full teacher distributions. Returns the epoch with
/// the lowest validation loss (training loss when `valid` is empty) and
/// stops after `patience` epochs without improvement.
TrainedStudent train_student(std::span<const DistilledExample> train,
                             std::span<const DistilledExample> valid,
                             const features::FeatureLayout& layout,
                             const StudentTrainConfig& config,
                             const std::function<void(const StudentEpochStats&)>& on_epoch = {});

/// Mean soft cross-entropy over `set`.
double distillation_loss(const StudentModel& model, std::span<const DistilledExample> set);

void save_student(const std::filesystem::path& path, const StudentModel& model,
                  const nlohmann::json& extra_metadata = nlohmann::json::object());

/// Throws CheckpointError on corruption or when `expected_layout` is given
/// and differs from the stored layout.
StudentModel load_student(const std::filesystem::path& path,
                          const features::FeatureLayout* expected_layout = nullptr);

}  // namespace relevance::student
