#include "relevance/neuralcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>

#include "relevance/util/hash.hpp"

namespace relevance::nn {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == product(shape_), "tensor data length does not match its shape");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return s;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : t.data()) x = rng.uniform(-a, a);
}

// --- dense ------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim)
    : weight({out_dim, in_dim}), bias({out_dim}) {}

void DenseLayer::init(Rng& rng) {
  glorot_uniform(weight, in_dim(), out_dim(), rng);
  bias.fill(0.0);
}

DenseGrads::DenseGrads(const DenseLayer& layer)
    : d_weight(layer.weight.shape()), d_bias(layer.bias.shape()) {}

void DenseGrads::zero() {
  d_weight.fill(0.0);
  d_bias.fill(0.0);
}

void dense_forward(const DenseLayer& layer, std::span<const double> x, std::span<double> y) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  require(x.size() == in, "dense input has " + std::to_string(x.size()) + " entries, layer expects " +
                              std::to_string(in));
  require(y.size() == out, "dense output buffer has the wrong length");
  const double* w = layer.weight.data().data();
  for (std::size_t o = 0; o < out; ++o) {
    const double* wr = w + o * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
    y[o] = acc + layer.bias[o];
  }
}

std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> x) {
  std::vector<double> y(layer.out_dim());
  dense_forward(layer, x, y);
  return y;
}

void dense_backward_accumulate(const DenseLayer& layer, std::span<const double> x,
                               std::span<const double> dy, std::span<double> dx,
                               DenseGrads& grads) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  require(x.size() == in && dy.size() == out, "dense backward shape mismatch");
  require(dx.empty() || dx.size() == in, "dense backward dx buffer has the wrong length");
  require(grads.d_weight.shape() == layer.weight.shape(), "gradient buffer shape mismatch");
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  const double* w = layer.weight.data().data();
  double* dw = grads.d_weight.data().data();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    grads.d_bias[o] += g;
    if (g == 0.0) continue;
    double* dwr = dw + o * in;
    for (std::size_t i = 0; i < in; ++i) dwr[i] += g * x[i];
    if (!dx.empty()) {
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += g * wr[i];
    }
  }
}

DenseBackward dense_backward(const DenseLayer& layer, std::span<const double> x,
                             std::span<const double> dy) {
  DenseGrads grads(layer);
  DenseBackward out;
  out.dx.assign(layer.in_dim(), 0.0);
  dense_backward_accumulate(layer, x, dy, out.dx, grads);
  out.d_weight = std::move(grads.d_weight);
  out.d_bias = std::move(grads.d_bias);
  return out;
}

// --- activations and loss ---------------------------------------------------

void relu_forward(std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "relu shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

std::vector<double> relu_forward(std::span<const double> x) {
  std::vector<double> y(x.size());
  relu_forward(x, y);
  return y;
}

void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  require(x.size() == dy.size() && x.size() == dx.size(), "relu backward shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

std::vector<double> relu_backward(std::span<const double> x, std::span<const double> dy) {
  std::vector<double> dx(x.size());
  relu_backward(x, dy, dx);
  return dx;
}

namespace {

void check_finite(const Logits& logits) {
  for (double z : logits) {
    if (!std::isfinite(z)) throw NonFiniteValue("non-finite logit");
  }
}

}  // namespace

Logits softmax(const Logits& logits) {
  check_finite(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  Logits q{};
  double total = 0.0;
  for (std::size_t c = 0; c < q.size(); ++c) {
    q[c] = std::exp(logits[c] - m);
    total += q[c];
  }
  for (double& v : q) v /= total;
  return q;
}

double xent_loss(const Logits& logits, const corpus::SoftLabel& target) {
  check_finite(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - m);
  const double log_z = m + std::log(total);
  double loss = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (target[c] > 0.0) loss -= target[c] * (logits[c] - log_z);
  }
  return loss;
}

XentResult softmax_xent(const Logits& logits, const corpus::SoftLabel& target) {
  XentResult r;
  r.loss = xent_loss(logits, target);
  const Logits q = softmax(logits);
  for (std::size_t c = 0; c < q.size(); ++c) r.dlogits[c] = q[c] - target[c];
  return r;
}

// --- Adam -------------------------------------------------------------------

nlohmann::json to_json(const AdamConfig& c) {
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

AdamConfig adam_config_from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  return c;
}

AdamState::AdamState(AdamConfig config, std::span<const Tensor* const> params)
    : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamState::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(),
          "adam parameter list does not match its state");
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k]->data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    require(p.size() == g.size() && p.size() == m.size(), "adam shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state) {
  state.step(params, grads);
}

// --- gradient check ---------------------------------------------------------

GradCheckReport grad_check(const std::function<double()>& loss, std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic, double h,
                           std::size_t n_probes, std::uint64_t seed) {
  require(params.size() == analytic.size(), "grad_check parameter/gradient count mismatch");
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k]->size() == analytic[k]->size(), "grad_check gradient shape mismatch");
    offsets.push_back(total);
    total += params[k]->size();
  }
  GradCheckReport report;
  if (total == 0) return report;
  Rng rng(seed);
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    const std::size_t flat = static_cast<std::size_t>(rng.below(total));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t k = static_cast<std::size_t>(std::distance(offsets.begin(), it)) - 1;
    const std::size_t i = flat - offsets[k];
    double& x = (*params[k])[i];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = (*analytic[k])[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
    ++report.probes;
  }
  return report;
}

// --- checkpoint -------------------------------------------------------------

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint has no tensor named '" + std::string(name) + "'");
}

namespace {

constexpr std::string_view kMagic("RLVCKPT\0", 8);

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int b = 0; b < n; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int b = 0; b < n; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(b)]))
           << (8 * b);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  w.u64(meta.size());
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double x : t.data()) w.f64(x);
  }
  w.u64(fnv1a64(w.str()));
  return std::move(w.str());
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = r.u64();
  if (meta_len > r.remaining()) throw CheckpointError("checkpoint is truncated");
  const auto meta = r.bytes(static_cast<std::size_t>(meta_len));
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error&) {
    throw CheckpointError("checkpoint metadata is not valid JSON");
  }
  const auto count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.u32();
    std::string name(r.bytes(name_len));
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.u64();
      if (e != 0 && n > r.remaining() / e) throw CheckpointError("checkpoint is truncated");
      shape.push_back(static_cast<std::size_t>(e));
      n *= static_cast<std::size_t>(e);
    }
    if (n > r.remaining() / 8) throw CheckpointError("checkpoint is truncated");
    std::vector<double> data(n);
    for (auto& x : data) x = r.f64();
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const std::size_t body_len = r.position();
  const auto stored = r.u64();
  if (stored != fnv1a64(bytes.substr(0, body_len))) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto out = corpus::open_output(path);
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw CheckpointError("checkpoint '" + path.string() + "' does not exist");
  }
  auto in = corpus::open_input(path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace relevance::nn
