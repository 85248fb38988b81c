#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "basis/core.hpp"

namespace basis {

inline constexpr double kLog2Pi = 1.83787706640934548356;

// Exponent differences beyond this are treated as zero weight.
inline constexpr double kExpClamp = 700.0;

/// A prior over signals of a fixed shape that can report the score of its
/// Gaussian-smoothed version p_sigma, and optionally the log-density.
class ScorePrior {
 public:
  virtual ~ScorePrior() = default;

  virtual const Shape& shape() const = 0;

  /// grad_x log p_sigma(x)
  virtual Signal score(const Signal& x, double sigma) const = 0;

  /// log p_sigma(x), or nullopt when the prior has no explicit density.
  virtual std::optional<double> log_density(const Signal& /*x*/, double /*sigma*/) const { return std::nullopt; }

  /// A draw from p_sigma, for priors that support sampling.
  virtual std::optional<Signal> sample(double /*sigma*/, RngStream& /*rng*/) const { return std::nullopt; }

  bool has_log_density() const { return has_density_; }

 protected:
  explicit ScorePrior(bool has_density) : has_density_(has_density) {}

  void check_input(const Signal& x) const {
    require(x.shape() == shape(), Errc::invalid_argument,
            "prior expects shape " + shape().str() + ", got " + x.shape().str());
  }

 private:
  bool has_density_;
};

class IsotropicGaussianPrior final : public ScorePrior {
 public:
  IsotropicGaussianPrior(Signal mean, double base_variance)
      : ScorePrior(true), mean_(std::move(mean)), base_variance_(base_variance) {
    require(base_variance_ >= 0 && std::isfinite(base_variance_), Errc::invalid_argument,
            "base variance must be non-negative");
  }

  const Shape& shape() const override { return mean_.shape(); }
  const Signal& mean() const { return mean_; }
  double base_variance() const { return base_variance_; }

  Signal score(const Signal& x, double sigma) const override {
    check_input(x);
    const double var = variance(sigma);
    Signal out = mean_ - x;
    out *= 1.0 / var;
    return out;
  }

  std::optional<double> log_density(const Signal& x, double sigma) const override {
    check_input(x);
    const double var = variance(sigma);
    const double d = static_cast<double>(x.size());
    return -0.5 * d * (kLog2Pi + std::log(var)) - x.squared_distance(mean_) / (2.0 * var);
  }

  std::optional<Signal> sample(double sigma, RngStream& rng) const override {
    const double sd = std::sqrt(variance(sigma));
    Signal out = mean_;
    for (double& v : out.data()) v += sd * rng.normal();
    return out;
  }

 private:
  double variance(double sigma) const {
    require(sigma >= 0, Errc::invalid_argument, "sigma must be non-negative");
    const double var = base_variance_ + sigma * sigma;
    require(var > 0, Errc::degenerate_density, "point-mass prior evaluated at sigma = 0");
    return var;
  }

  Signal mean_;
  double base_variance_;
};

/// Mixture of isotropic Gaussians. Smoothing by sigma adds sigma^2 to every
/// component variance, so the noisy density stays in closed form.
class GmmPrior : public ScorePrior {
 public:
  GmmPrior(std::vector<double> weights, std::vector<Signal> means, std::vector<double> base_variances)
      : ScorePrior(true),
        weights_(std::move(weights)),
        means_(std::move(means)),
        base_variances_(std::move(base_variances)) {
    require(!means_.empty(), Errc::invalid_argument, "mixture needs at least one component");
    require(weights_.size() == means_.size() && base_variances_.size() == means_.size(), Errc::invalid_argument,
            "mixture weights, means and variances must have equal length");
    double total = 0.0;
    for (double w : weights_) {
      require(w > 0 && std::isfinite(w), Errc::invalid_argument, "mixture weights must be positive");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-12, Errc::invalid_argument, "mixture weights must sum to 1");
    for (double v : base_variances_)
      require(v >= 0 && std::isfinite(v), Errc::invalid_argument, "component variances must be non-negative");
    for (const auto& m : means_)
      require(m.shape() == means_.front().shape(), Errc::invalid_argument, "mixture means must share one shape");
    log_weights_.reserve(weights_.size());
    for (double w : weights_) log_weights_.push_back(std::log(w));
  }

  const Shape& shape() const override { return means_.front().shape(); }
  std::size_t components() const { return means_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Signal>& means() const { return means_; }
  const std::vector<double>& base_variances() const { return base_variances_; }

  std::optional<double> log_density(const Signal& x, double sigma) const override {
    check_input(x);
    std::vector<double> e = log_terms(x, sigma);
    const double mx = *std::max_element(e.begin(), e.end());
    double acc = 0.0;
    for (double v : e)
      if (v - mx > -kExpClamp) acc += std::exp(v - mx);
    return mx + std::log(acc);
  }

  Signal score(const Signal& x, double sigma) const override {
    check_input(x);
    std::vector<double> r = log_terms(x, sigma);
    normalize_responsibilities(r);
    Signal out(x.shape());
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t j = 0; j < means_.size(); ++j) {
      if (r[j] == 0.0) continue;
      const double coef = r[j] / (base_variances_[j] + sigma * sigma);
      auto mu = means_[j].data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += coef * (mu[i] - xv[i]);
    }
    return out;
  }

  /// Posterior responsibilities of the components under p_sigma.
  std::vector<double> responsibilities(const Signal& x, double sigma) const {
    check_input(x);
    std::vector<double> r = log_terms(x, sigma);
    normalize_responsibilities(r);
    return r;
  }

  std::optional<Signal> sample(double sigma, RngStream& rng) const override {
    double u = rng.uniform();
    std::size_t j = 0;
    for (; j + 1 < weights_.size(); ++j) {
      if (u < weights_[j]) break;
      u -= weights_[j];
    }
    const double sd = std::sqrt(base_variances_[j] + sigma * sigma);
    Signal out = means_[j];
    for (double& v : out.data()) v += sd * rng.normal();
    return out;
  }

 private:
  std::vector<double> log_terms(const Signal& x, double sigma) const {
    require(sigma >= 0, Errc::invalid_argument, "sigma must be non-negative");
    const double d = static_cast<double>(x.size());
    std::vector<double> e(means_.size());
    for (std::size_t j = 0; j < means_.size(); ++j) {
      const double var = base_variances_[j] + sigma * sigma;
      require(var > 0, Errc::degenerate_density, "mixture component with zero variance evaluated at sigma = 0");
      e[j] = log_weights_[j] - 0.5 * d * (kLog2Pi + std::log(var)) - x.squared_distance(means_[j]) / (2.0 * var);
    }
    return e;
  }

  static void normalize_responsibilities(std::vector<double>& e) {
    const double mx = *std::max_element(e.begin(), e.end());
    double total = 0.0;
    for (double& v : e) {
      const double diff = v - mx;
      v = diff > -kExpClamp ? std::exp(diff) : 0.0;
      total += v;
    }
    for (double& v : e) v /= total;
  }

  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Signal> means_;
  std::vector<double> base_variances_;
};

/// Uniform mixture of point masses at the data; p_sigma is the data smoothed
/// by an isotropic Gaussian of variance sigma^2.
class EmpiricalDiracPrior final : public GmmPrior {
 public:
  explicit EmpiricalDiracPrior(std::vector<Signal> dataset) : EmpiricalDiracPrior(Parts::from(std::move(dataset))) {}

  const std::vector<Signal>& dataset() const { return means(); }

 private:
  struct Parts {
    std::vector<double> weights;
    std::vector<Signal> points;
    std::vector<double> variances;

    static Parts from(std::vector<Signal> data) {
      require(!data.empty(), Errc::invalid_argument, "empirical prior needs a non-empty dataset");
      for (const auto& s : data)
        require(s.shape() == data.front().shape(), Errc::invalid_argument, "dataset shapes must be homogeneous");
      const std::size_t n = data.size();
      std::vector<double> w(n, 1.0 / static_cast<double>(n));
      // Make the weights sum to 1 within rounding for any n.
      double total = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) total += w[i];
      w.back() = 1.0 - total;
      return {std::move(w), std::move(data), std::vector<double>(n, 0.0)};
    }
  };

  explicit EmpiricalDiracPrior(Parts p)
      : GmmPrior(std::move(p.weights), std::move(p.points), std::move(p.variances)) {}
};

inline std::shared_ptr<EmpiricalDiracPrior> empirical_prior(std::vector<Signal> dataset) {
  return std::make_shared<EmpiricalDiracPrior>(std::move(dataset));
}

inline Signal gaussian_score(const IsotropicGaussianPrior& prior, const Signal& x, double sigma) {
  return prior.score(x, sigma);
}
inline double gmm_noisy_log_density(const GmmPrior& prior, const Signal& x, double sigma) {
  return *prior.log_density(x, sigma);
}
inline Signal gmm_noisy_score(const GmmPrior& prior, const Signal& x, double sigma) { return prior.score(x, sigma); }

}  // namespace basis
