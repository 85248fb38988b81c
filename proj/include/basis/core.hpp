#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace basis {

enum class Errc {
  invalid_argument,
  degenerate_density,
  unsupported_prior,
  unsupported_operator,
  unsupported_size,
  too_large,
  training_diverged,
  sampler_diverged,
  format_error,
  io_error,
  config_error,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "E_INVALID_ARGUMENT";
    case Errc::degenerate_density: return "E_DEGENERATE_DENSITY";
    case Errc::unsupported_prior: return "E_UNSUPPORTED_PRIOR";
    case Errc::unsupported_operator: return "E_UNSUPPORTED_OPERATOR";
    case Errc::unsupported_size: return "E_UNSUPPORTED_SIZE";
    case Errc::too_large: return "E_TOO_LARGE";
    case Errc::training_diverged: return "E_TRAINING_DIVERGED";
    case Errc::sampler_diverged: return "E_SAMPLER_DIVERGED";
    case Errc::format_error: return "E_FORMAT";
    case Errc::io_error: return "E_IO";
    case Errc::config_error: return "E_CONFIG";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

// ---------------------------------------------------------------------------
// Shape / Signal
// ---------------------------------------------------------------------------

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    require(!dims_.empty(), Errc::invalid_argument, "shape must have at least one extent");
    for (auto d : dims_) require(d >= 1, Errc::invalid_argument, "shape extents must be >= 1");
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t size() const {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<std::size_t> dims_;
};

/// Flat real-valued array with an explicit shape. Components, mixtures and
/// gradients all use this type.
class Signal {
 public:
  Signal() = default;
  explicit Signal(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_.size(), fill) {}
  Signal(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_.size(), Errc::invalid_argument,
            "signal data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }
  /// Convenience for flat vectors of dimension d.
  static Signal vec(std::vector<double> data) {
    Shape s{data.size()};
    return Signal(std::move(s), std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Signal& operator+=(const Signal& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Signal& operator-=(const Signal& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Signal& operator*=(double a) {
    for (double& v : data_) v *= a;
    return *this;
  }
  /// this += a * o
  Signal& axpy(double a, const Signal& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
    return *this;
  }

  friend Signal operator+(Signal a, const Signal& b) { return a += b; }
  friend Signal operator-(Signal a, const Signal& b) { return a -= b; }
  friend Signal operator*(double s, Signal a) { return a *= s; }

  double squared_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return acc;
  }
  double dot(const Signal& o) const {
    check_same(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) acc += data_[i] * o.data_[i];
    return acc;
  }
  double squared_distance(const Signal& o) const {
    check_same(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const double d = data_[i] - o.data_[i];
      acc += d * d;
    }
    return acc;
  }

  void check_same(const Signal& o) const {
    if (!(shape_ == o.shape_))
      throw Error(Errc::invalid_argument, "shape mismatch: " + shape_.str() + " vs " + o.shape_.str());
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// The k components x_1..x_k of a mixture.
using ComponentSet = std::vector<Signal>;

inline void check_components(const ComponentSet& x) {
  require(!x.empty(), Errc::invalid_argument, "component set must hold at least one component");
  for (const auto& c : x)
    require(c.shape() == x.front().shape(), Errc::invalid_argument, "component shapes must be homogeneous");
}

// ---------------------------------------------------------------------------
// Noise schedules
// ---------------------------------------------------------------------------

class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
    require(!sigmas_.empty(), Errc::invalid_argument, "noise schedule must be non-empty");
    for (std::size_t i = 0; i < sigmas_.size(); ++i) {
      require(sigmas_[i] > 0 && std::isfinite(sigmas_[i]), Errc::invalid_argument, "noise levels must be positive");
      if (i) require(sigmas_[i] <= sigmas_[i - 1], Errc::invalid_argument, "noise levels must be non-increasing");
    }
  }

  std::size_t levels() const { return sigmas_.size(); }
  double sigma(std::size_t level) const { return sigmas_.at(level); }
  double first() const { return sigmas_.front(); }
  double last() const { return sigmas_.back(); }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

/// sigmas[i] = first * (last/first)^(i/(levels-1)).
inline NoiseSchedule geometric_schedule(double sigma_first, double sigma_last, std::size_t levels) {
  require(sigma_first > 0 && sigma_last > 0, Errc::invalid_argument, "schedule endpoints must be positive");
  require(sigma_first >= sigma_last, Errc::invalid_argument, "sigma_first must be >= sigma_last");
  require(levels >= 2, Errc::invalid_argument, "a geometric schedule needs at least 2 levels");
  std::vector<double> s(levels);
  const double ratio = sigma_last / sigma_first;
  for (std::size_t i = 0; i < levels; ++i)
    s[i] = sigma_first * std::pow(ratio, static_cast<double>(i) / static_cast<double>(levels - 1));
  s.front() = sigma_first;
  s.back() = sigma_last;
  return NoiseSchedule(std::move(s));
}

/// eta_i = delta * sigma_i^2 / sigma_L^2
inline double step_size(const NoiseSchedule& schedule, std::size_t level, double delta) {
  require(level < schedule.levels(), Errc::invalid_argument,
          "level " + std::to_string(level) + " outside schedule of " + std::to_string(schedule.levels()));
  require(delta > 0, Errc::invalid_argument, "delta must be positive");
  const double s = schedule.sigma(level), sl = schedule.last();
  return delta * (s * s) / (sl * sl);
}

struct GammaCoupling {
  enum class Mode { EqualToSigmaSquared, Fixed };
  Mode mode = Mode::EqualToSigmaSquared;
  double value = 0.0;  // gamma^2 when Fixed

  static GammaCoupling equal_to_sigma() { return {}; }
  static GammaCoupling fixed(double gamma2) { return {Mode::Fixed, gamma2}; }

  double gamma2(double sigma) const { return mode == Mode::Fixed ? value : sigma * sigma; }
};

struct AnnealConfig {
  double delta = 2e-5;
  std::size_t steps_per_level = 100;
  std::uint64_t seed = 0;
  GammaCoupling gamma_coupling{};

  void validate() const {
    require(delta > 0 && std::isfinite(delta), Errc::invalid_argument, "delta must be positive");
    if (gamma_coupling.mode == GammaCoupling::Mode::Fixed)
      require(gamma_coupling.value > 0, Errc::invalid_argument, "fixed gamma^2 must be positive");
  }
};

// ---------------------------------------------------------------------------
// Counter-based random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic stream of uniforms and Gaussians.
///
/// The n-th 64-bit word of a stream is splitmix64(key + n * golden), so a
/// stream is a pure function of its key and position. Substreams derive their
/// key by hashing (parent key, index); chains and levels therefore never share
/// draws, and the result of chain j does not depend on which thread runs it or
/// on how many other chains exist. Normals use the Box-Muller transform on
/// consecutive uniform pairs (both outputs are used).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : key_(splitmix64(seed ^ 0x6A09E667F3BCC909ull)) {}

  RngStream substream(std::uint64_t index) const {
    RngStream s;
    s.key_ = splitmix64(key_ ^ splitmix64(index + 0xBB67AE8584CAA73Bull));
    return s;
  }

  std::uint64_t next_u64() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    require(n > 0, Errc::invalid_argument, "empty integer range");
    // Lemire's multiply-shift with rejection.
    const std::uint64_t bound = n;
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t t = (0 - bound) % bound;
      while (low < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::size_t>(m >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace basis
