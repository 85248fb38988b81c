#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "basis/core.hpp"
#include "basis/priors.hpp"

namespace basis {

/// Trainable parameters of a ScoreNet. Layer l maps width[l] -> width[l+1];
/// `scale` holds one output multiplier per noise level.
struct ScoreNetParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd scale;

  std::size_t count() const {
    std::size_t n = static_cast<std::size_t>(scale.size());
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  /// Flattened in declared order: for each layer W (row-major) then b, then scale.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) out.push_back(weights[l](r, c));
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) out.push_back(biases[l](r));
    }
    for (Eigen::Index r = 0; r < scale.size(); ++r) out.push_back(scale(r));
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    require(flat.size() == count(), Errc::invalid_argument, "parameter vector has the wrong length");
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[k++];
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l](r) = flat[k++];
    }
    for (Eigen::Index r = 0; r < scale.size(); ++r) scale(r) = flat[k++];
  }

  ScoreNetParams zeros_like() const {
    ScoreNetParams z;
    for (const auto& w : weights) z.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) z.biases.push_back(Eigen::VectorXd::Zero(b.size()));
    z.scale = Eigen::VectorXd::Zero(scale.size());
    return z;
  }

  /// this += a * o
  void axpy(double a, const ScoreNetParams& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += a * o.weights[l];
      biases[l] += a * o.biases[l];
    }
    scale += a * o.scale;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return scale.allFinite();
  }
};

struct ScoreNetOptions {
  std::vector<std::size_t> hidden{128, 128};
  bool zero_final_layer = false;
  std::uint64_t seed = 0;
};

/// Noise-conditioned score model: input [x, onehot(level)] passes through
/// softplus hidden layers to a linear output, which is multiplied by a learned
/// per-level scale (initialized to 1/sigma_level).
class ScoreNet {
 public:
  ScoreNet(std::size_t dim, NoiseSchedule schedule, const ScoreNetOptions& options = {})
      : dim_(dim), schedule_(std::move(schedule)), hidden_(options.hidden) {
    require(dim_ >= 1, Errc::invalid_argument, "score network dimension must be >= 1");
    for (auto h : hidden_) require(h >= 1, Errc::invalid_argument, "hidden layer sizes must be >= 1");
    const auto widths = layer_widths();
    RngStream rng = RngStream(options.seed).substream(0x5C04E);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(widths[l]), out = static_cast<Eigen::Index>(widths[l + 1]);
      Eigen::MatrixXd w(out, in);
      const bool last = l + 2 == widths.size();
      const double sd = (last && options.zero_final_layer) ? 0.0 : std::sqrt(1.0 / static_cast<double>(in));
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) w(r, c) = sd * rng.normal();
      params_.weights.push_back(std::move(w));
      params_.biases.push_back(Eigen::VectorXd::Zero(out));
    }
    params_.scale.resize(static_cast<Eigen::Index>(levels()));
    for (std::size_t i = 0; i < levels(); ++i) params_.scale(static_cast<Eigen::Index>(i)) = 1.0 / schedule_.sigma(i);
  }

  std::size_t dim() const { return dim_; }
  std::size_t levels() const { return schedule_.levels(); }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  ScoreNetParams& params() { return params_; }
  const ScoreNetParams& params() const { return params_; }

  /// d + L, hidden..., d
  std::vector<std::size_t> layer_widths() const {
    std::vector<std::size_t> w{dim_ + levels()};
    w.insert(w.end(), hidden_.begin(), hidden_.end());
    w.push_back(dim_);
    return w;
  }

  struct Cache {
    std::vector<Eigen::MatrixXd> pre;   // pre-activations of each hidden layer
    std::vector<Eigen::MatrixXd> acts;  // inputs of each layer (acts[0] is the network input)
    Eigen::MatrixXd raw;                // final linear output before the level scale
  };

  /// Columns of `x` are samples. Returns the d x B score estimates.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, std::size_t level, Cache* cache = nullptr) const {
    require(static_cast<std::size_t>(x.rows()) == dim_, Errc::invalid_argument,
            "score network expects dimension " + std::to_string(dim_) + ", got " + std::to_string(x.rows()));
    require(level < levels(), Errc::invalid_argument, "noise level index out of range");
    Eigen::MatrixXd a(static_cast<Eigen::Index>(dim_ + levels()), x.cols());
    a.topRows(static_cast<Eigen::Index>(dim_)) = x;
    a.bottomRows(static_cast<Eigen::Index>(levels())).setZero();
    a.row(static_cast<Eigen::Index>(dim_ + level)).setOnes();
    const std::size_t n_layers = params_.weights.size();
    if (cache) {
      cache->pre.clear();
      cache->acts.clear();
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
      Eigen::MatrixXd z = params_.weights[l] * a;
      z.colwise() += params_.biases[l];
      if (cache) cache->acts.push_back(a);
      if (l + 1 == n_layers) {
        if (cache) cache->raw = z;
        return params_.scale(static_cast<Eigen::Index>(level)) * z;
      }
      if (cache) cache->pre.push_back(z);
      a = z.unaryExpr([](double v) { return softplus(v); });
    }
    return a;  // unreachable: there is always an output layer
  }

  Signal forward(const Signal& x, std::size_t level) const {
    require(x.size() == dim_, Errc::invalid_argument,
            "score network expects dimension " + std::to_string(dim_) + ", got " + std::to_string(x.size()));
    Eigen::Map<const Eigen::VectorXd> in(x.data().data(), static_cast<Eigen::Index>(dim_));
    Eigen::MatrixXd out = forward_batch(in, level);
    return Signal(x.shape(), std::vector<double>(out.data(), out.data() + out.size()));
  }

  /// Reverse-mode gradient of sum(upstream .* output) given a forward cache.
  ScoreNetParams backward(const Cache& cache, const Eigen::MatrixXd& upstream, std::size_t level) const {
    ScoreNetParams g = params_.zeros_like();
    const auto lv = static_cast<Eigen::Index>(level);
    g.scale(lv) = (upstream.array() * cache.raw.array()).sum();
    Eigen::MatrixXd delta = params_.scale(lv) * upstream;
    for (std::size_t l = params_.weights.size(); l-- > 0;) {
      g.weights[l] = delta * cache.acts[l].transpose();
      g.biases[l] = delta.rowwise().sum();
      if (l == 0) break;
      Eigen::MatrixXd back = params_.weights[l].transpose() * delta;
      delta = back.array() * cache.pre[l - 1].unaryExpr([](double v) { return sigmoid(v); }).array();
    }
    return g;
  }

  static double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
  static double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }

 private:
  std::size_t dim_;
  NoiseSchedule schedule_;
  std::vector<std::size_t> hidden_;
  ScoreNetParams params_;
};

inline Signal scorenet_forward(const ScoreNet& net, const Signal& x, std::size_t level) {
  return net.forward(x, level);
}

inline Eigen::MatrixXd pack_columns(const std::vector<Signal>& batch, std::size_t dim) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    require(batch[j].size() == dim, Errc::invalid_argument, "batch element has the wrong dimension");
    for (std::size_t i = 0; i < dim; ++i) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = batch[j][i];
  }
  return out;
}

struct DsmResult {
  double loss = 0.0;
  ScoreNetParams grad;
};

/// DSM objective with supplied noise: columns of `x` are clean samples and
/// `eps` the standard-normal perturbations. Loss is the batch mean of
/// sigma^2 ||net(x + sigma eps) + eps/sigma||^2 / 2.
inline DsmResult dsm_loss_and_grad(const ScoreNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& eps,
                                   std::size_t level) {
  require(x.cols() > 0, Errc::invalid_argument, "denoising batch is empty");
  require(x.rows() == eps.rows() && x.cols() == eps.cols(), Errc::invalid_argument, "noise shape mismatch");
  const double sigma = net.schedule().sigma(level);
  const double batch = static_cast<double>(x.cols());
  ScoreNet::Cache cache;
  Eigen::MatrixXd out = net.forward_batch(x + sigma * eps, level, &cache);
  Eigen::MatrixXd resid = out + eps / sigma;
  DsmResult r;
  r.loss = sigma * sigma * resid.squaredNorm() / (2.0 * batch);
  r.grad = net.backward(cache, (sigma * sigma / batch) * resid, level);
  return r;
}

inline DsmResult dsm_loss_and_grad(const ScoreNet& net, const std::vector<Signal>& batch, std::size_t level,
                                   RngStream& rng) {
  require(!batch.empty(), Errc::invalid_argument, "denoising batch is empty");
  Eigen::MatrixXd x = pack_columns(batch, net.dim());
  Eigen::MatrixXd eps(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < eps.cols(); ++j)
    for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = rng.normal();
  return dsm_loss_and_grad(net, x, eps, level);
}

struct DsmConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;

  void validate() const {
    require(batch_size >= 1, Errc::invalid_argument, "batch size must be >= 1");
    require(learning_rate > 0 && std::isfinite(learning_rate), Errc::invalid_argument,
            "learning rate must be positive");
  }
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  std::size_t updates = 0;
};

/// Plain SGD on the DSM objective. Each epoch visits the dataset in a seeded
/// random order and every minibatch trains one uniformly drawn noise level.
/// The reported epoch loss averages the per-level batch means uniformly over
/// levels, so it estimates the same objective without level-mix noise.
inline TrainReport train_dsm(ScoreNet& net, const std::vector<Signal>& dataset, const DsmConfig& config) {
  require(!dataset.empty(), Errc::invalid_argument, "training dataset is empty");
  config.validate();
  TrainReport report;
  const RngStream root(config.seed);
  const std::size_t n = dataset.size();
  Eigen::MatrixXd all = pack_columns(dataset, net.dim());

  {
    // Reference loss of the starting weights, one pass with every level.
    RngStream rng = root.substream(0x1417);
    double total = 0.0;
    for (std::size_t level = 0; level < net.levels(); ++level) {
      Eigen::MatrixXd eps(all.rows(), all.cols());
      for (Eigen::Index j = 0; j < eps.cols(); ++j)
        for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = rng.normal();
      total += dsm_loss_and_grad(net, all, eps, level).loss;
    }
    report.initial_loss = total / static_cast<double>(net.levels());
  }

  const std::size_t levels = net.levels();
  std::vector<std::size_t> order(n);
  std::vector<double> level_total(levels);
  std::vector<std::size_t> level_batches(levels);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream rng = root.substream(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::fill(level_total.begin(), level_total.end(), 0.0);
    std::fill(level_batches.begin(), level_batches.end(), std::size_t{0});
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const auto cols = static_cast<Eigen::Index>(stop - start);
      Eigen::MatrixXd x(all.rows(), cols), eps(all.rows(), cols);
      for (Eigen::Index j = 0; j < cols; ++j) x.col(j) = all.col(static_cast<Eigen::Index>(order[start + j]));
      const std::size_t level = rng.below(levels);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = rng.normal();
      DsmResult r = dsm_loss_and_grad(net, x, eps, level);
      net.params().axpy(-config.learning_rate, r.grad);
      require(std::isfinite(r.loss) && net.params().all_finite(), Errc::training_diverged,
              "non-finite loss or weights at epoch " + std::to_string(epoch));
      level_total[level] += r.loss;
      ++level_batches[level];
      ++report.updates;
    }
    double mean = 0.0;
    std::size_t seen = 0;
    for (std::size_t l = 0; l < levels; ++l)
      if (level_batches[l]) {
        mean += level_total[l] / static_cast<double>(level_batches[l]);
        ++seen;
      }
    mean /= static_cast<double>(seen);
    report.epoch_loss.push_back(mean);
    require(mean <= 10.0 * report.initial_loss, Errc::training_diverged,
            "loss " + std::to_string(mean) + " exceeds 10x the initial " + std::to_string(report.initial_loss) +
                " at epoch " + std::to_string(epoch));
  }
  return report;
}

/// Adapts a trained ScoreNet to the ScorePrior interface. Scores are only
/// defined at the network's own noise levels; log-density is unavailable.
class ScoreNetPrior final : public ScorePrior {
 public:
  ScoreNetPrior(std::shared_ptr<const ScoreNet> net, Shape shape)
      : ScorePrior(false), net_(std::move(net)), shape_(std::move(shape)) {
    require(net_ != nullptr, Errc::invalid_argument, "score network is null");
    require(shape_.size() == net_->dim(), Errc::invalid_argument,
            "shape " + shape_.str() + " does not match network dimension " + std::to_string(net_->dim()));
  }

  const Shape& shape() const override { return shape_; }

  Signal score(const Signal& x, double sigma) const override {
    check_input(x);
    return net_->forward(x, level_of(sigma));
  }

  std::size_t level_of(double sigma) const {
    const auto& s = net_->schedule().sigmas();
    for (std::size_t i = 0; i < s.size(); ++i)
      if (std::abs(s[i] - sigma) <= 1e-9 * s[i]) return i;
    throw Error(Errc::invalid_argument, "noise level " + std::to_string(sigma) + " is not one the network was trained on");
  }

 private:
  std::shared_ptr<const ScoreNet> net_;
  Shape shape_;
};

// ---------------------------------------------------------------------------
// BSN1 weight files
// ---------------------------------------------------------------------------
//
// Little-endian. "BSN1", u32 d, u32 L, u32 H, u32 hidden[H], f64 sigmas[L],
// then for each layer f64 W (row-major, out x in) followed by f64 b, then
// f64 scale[L].

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::vector<unsigned char>& bytes() const { return bytes_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(Errc::format_error, "truncated file at byte offset " + std::to_string(pos_));
  }

  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline std::string encode_scorenet(const ScoreNet& net) {
  std::ostringstream os;
  os.write("BSN1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(net.dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.levels()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.hidden().size()));
  for (auto h : net.hidden()) detail::put_u32(os, static_cast<std::uint32_t>(h));
  for (double s : net.schedule().sigmas()) detail::put_f64(os, s);
  for (double v : net.params().flatten()) detail::put_f64(os, v);
  return os.str();
}

inline ScoreNet decode_scorenet(std::vector<unsigned char> bytes, const std::string& name = "<memory>") {
  detail::ByteReader r(std::move(bytes));
  const auto& b = r.bytes();
  require(b.size() >= 4 && std::memcmp(b.data(), "BSN1", 4) == 0, Errc::format_error,
          "bad magic at byte offset 0 in " + name);
  r.skip(4);
  const std::uint32_t d = r.u32();
  const std::uint32_t levels = r.u32();
  const std::uint32_t n_hidden = r.u32();
  require(d >= 1 && levels >= 1, Errc::format_error, "zero dimension or level count at byte offset 4 in " + name);
  require(n_hidden <= 64, Errc::format_error, "implausible hidden layer count at byte offset 12 in " + name);
  ScoreNetOptions options;
  options.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) {
    const std::size_t at = r.pos();
    const std::uint32_t h = r.u32();
    require(h >= 1 && h <= (1u << 20), Errc::format_error,
            "bad hidden size at byte offset " + std::to_string(at) + " in " + name);
    options.hidden.push_back(h);
  }
  const std::size_t sigmas_at = r.pos();
  std::vector<double> sigmas(levels);
  for (auto& s : sigmas) s = r.f64();
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    require(sigmas[i] > 0 && std::isfinite(sigmas[i]) && (i == 0 || sigmas[i] <= sigmas[i - 1]), Errc::format_error,
            "invalid noise level at byte offset " + std::to_string(sigmas_at + 8 * i) + " in " + name);
  ScoreNet net(d, NoiseSchedule(std::move(sigmas)), options);
  const std::size_t count = net.params().count();
  require(r.remaining() == 8 * count, Errc::format_error,
          "expected " + std::to_string(8 * count) + " weight bytes after byte offset " + std::to_string(r.pos()) +
              ", found " + std::to_string(r.remaining()) + " in " + name);
  std::vector<double> flat(count);
  for (auto& v : flat) v = r.f64();
  net.params().unflatten(flat);
  return net;
}

inline void save_scorenet(const ScoreNet& net, const std::string& path) {
  const std::string bytes = encode_scorenet(net);
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), Errc::io_error, "write failed for " + path);
}

inline ScoreNet load_scorenet(const std::string& path) { return decode_scorenet(detail::read_file_bytes(path), path); }

}  // namespace basis
