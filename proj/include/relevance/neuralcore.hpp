#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "relevance/corpus.hpp"
#include "relevance/util/rng.hpp"

namespace relevance::nn {

/// A logit or loss that is NaN or infinite.
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

/// Raised by the training loops when the loss or logits stop being finite.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v);
  double squared_norm() const;
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// y = W x + b with W of shape [out x in].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim);

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  void init(Rng& rng);
};

struct DenseGrads {
  Tensor d_weight;
  Tensor d_bias;

  explicit DenseGrads(const DenseLayer& layer);
  void zero();
};

void dense_forward(const DenseLayer& layer, std::span<const double> x, std::span<double> y);
std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> x);

/// Adds dy x^T to d_weight and dy to d_bias; writes W^T dy into dx unless dx
/// is empty.
void dense_backward_accumulate(const DenseLayer& layer, std::span<const double> x,
                               std::span<const double> dy, std::span<double> dx,
                               DenseGrads& grads);

struct DenseBackward {
  std::vector<double> dx;
  Tensor d_weight;
  Tensor d_bias;
};

DenseBackward dense_backward(const DenseLayer& layer, std::span<const double> x,
                             std::span<const double> dy);

void relu_forward(std::span<const double> x, std::span<double> y);
std::vector<double> relu_forward(std::span<const double> x);
void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);
std::vector<double> relu_backward(std::span<const double> x, std::span<const double> dy);

using Logits = std::array<double, corpus::kNumLevels>;

/// Max-subtracted softmax. Throws on non-finite logits.
Logits softmax(const Logits& logits);

struct XentResult {
  double loss = 0.0;
  Logits dlogits{};
};

/// loss = -sum_c target_c ln q_c with q = softmax(logits); dlogits = q - target.
XentResult softmax_xent(const Logits& logits, const corpus::SoftLabel& target);

/// Stable log-softmax cross-entropy value only.
double xent_loss(const Logits& logits, const corpus::SoftLabel& target);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

nlohmann::json to_json(const AdamConfig& c);
AdamConfig adam_config_from_json(const nlohmann::json& j);

/// Moment estimates for an ordered parameter list.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, std::span<const Tensor* const> params);

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return t_; }

  /// Bias-corrected Adam update of every parameter; increments t.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

/// Central-difference check of `analytic` against `loss()` on `n_probes`
/// uniformly drawn coordinates across `params`. Relative error per probe is
/// |a - n| / max(|a|, |n|, 1e-6). Parameters are restored afterwards.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic, double h,
                           std::size_t n_probes, std::uint64_t seed);

// --- checkpoint container ---------------------------------------------------

/// Named tensors plus a JSON metadata blob.
///
/// Binary layout (all integers little-endian, doubles IEEE-754 binary64 LE):
///   8 bytes   magic "RLVCKPT\0"
///   u32       format version (1)
///   u64       metadata byte length, then that many bytes of UTF-8 JSON
///   u32       tensor count
///   per tensor:
///     u32 name length, name bytes, u32 rank, u64 extent[rank], f64 data[...]
///   u64       FNV-1a of every preceding byte
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(std::string_view name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace relevance::nn
