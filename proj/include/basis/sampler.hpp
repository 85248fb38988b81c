#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "basis/core.hpp"
#include "basis/parallel.hpp"
#include "basis/priors.hpp"
#include "basis/tasks.hpp"

namespace basis {

using PriorRef = std::shared_ptr<const ScorePrior>;

/// One prior shared by every component, or one prior per component.
class PriorSet {
 public:
  PriorSet(PriorRef shared) : priors_{std::move(shared)} {  // NOLINT(google-explicit-constructor)
    require(priors_.front() != nullptr, Errc::invalid_argument, "prior is null");
  }
  template <class T>
    requires std::is_base_of_v<ScorePrior, T>
  PriorSet(std::shared_ptr<T> shared) : PriorSet(PriorRef(std::move(shared))) {}  // NOLINT
  PriorSet(std::vector<PriorRef> per_component) : priors_(std::move(per_component)) {  // NOLINT
    require(!priors_.empty(), Errc::invalid_argument, "prior list is empty");
    for (const auto& p : priors_) require(p != nullptr, Errc::invalid_argument, "prior is null");
  }

  const ScorePrior& at(std::size_t component) const {
    return priors_.size() == 1 ? *priors_.front() : *priors_.at(component);
  }
  bool shared() const { return priors_.size() == 1; }

  void check(const MixingOperator& op) const {
    require(shared() || priors_.size() == op.k(), Errc::invalid_argument,
            "expected 1 or " + std::to_string(op.k()) + " priors, got " + std::to_string(priors_.size()));
    for (std::size_t i = 0; i < op.k(); ++i)
      require(at(i).shape() == op.component_shape(), Errc::invalid_argument,
              "prior shape " + at(i).shape().str() + " does not match component shape " + op.component_shape().str());
  }

  bool has_log_density() const {
    for (const auto& p : priors_)
      if (!p->has_log_density()) return false;
    return true;
  }

  /// sum_i log p_sigma(x_i)
  double log_density(const ComponentSet& x, double sigma) const {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto v = at(i).log_density(x[i], sigma);
      require(v.has_value(), Errc::unsupported_prior, "prior does not expose a log-density");
      total += *v;
    }
    return total;
  }

 private:
  std::vector<PriorRef> priors_;
};

struct UniformBox {
  double lo = 0.0;
  double hi = 1.0;
};

struct SamplerConfig {
  NoiseSchedule schedule = geometric_schedule(1.0, 0.01, 10);
  AnnealConfig anneal{};
  std::variant<UniformBox, ComponentSet> init = UniformBox{};
  bool record_trace = true;

  void validate() const { anneal.validate(); }
};

struct TraceEntry {
  std::size_t level = 0;
  std::size_t step = 0;
  double eta = 0.0;
  double gamma2 = 0.0;
  double recon_sq = 0.0;  // ||m - g(x)||^2 after the step
  double prior_sq = 0.0;  // ||grad log p_sigma(x)||^2, summed over components
  double like_sq = 0.0;   // ||grad log p_gamma(m|x)||^2, summed over components
  double snr = 0.0;       // eta/4 * (prior_sq + like_sq)
};

struct Trace {
  std::vector<TraceEntry> entries;
};

struct SeparationResult {
  ComponentSet components;
  Trace trace;
};

/// Component i of the result is (G^T (m - g(x)))_i / gamma^2, the gradient of
/// log N(m; g(x), gamma^2 I) with respect to x_i.
inline ComponentSet likelihood_grad(const Signal& m, const ComponentSet& x, const MixingOperator& op, double gamma2) {
  require(gamma2 > 0 && std::isfinite(gamma2), Errc::invalid_argument, "gamma^2 must be positive");
  Signal residual = m - op.apply(x);
  ComponentSet g = op.adjoint(residual);
  for (auto& c : g) c *= 1.0 / gamma2;
  return g;
}

inline ComponentSet likelihood_grad(const Signal& m, const ComponentSet& x, const std::vector<double>& alpha,
                                    double gamma2) {
  require(!x.empty(), Errc::invalid_argument, "component set is empty");
  return likelihood_grad(m, x, MixingOperator::linear_sum(alpha, x.front().shape()), gamma2);
}

/// x + eta (prior + like) + sqrt(2 eta) eps. Noise is drawn component by
/// component in element order.
inline ComponentSet langevin_step(ComponentSet x, const ComponentSet& prior_scores, const ComponentSet& like_grad,
                                  double eta, RngStream& rng) {
  require(eta >= 0, Errc::invalid_argument, "step size must be non-negative");
  require(prior_scores.size() == x.size() && like_grad.size() == x.size(), Errc::invalid_argument,
          "gradient component counts do not match the state");
  const double noise = std::sqrt(2.0 * eta);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i].check_same(prior_scores[i]);
    x[i].check_same(like_grad[i]);
    auto xv = x[i].data();
    auto ps = prior_scores[i].data();
    auto lg = like_grad[i].data();
    for (std::size_t p = 0; p < xv.size(); ++p) xv[p] += eta * (ps[p] + lg[p]) + noise * rng.normal();
  }
  return x;
}

namespace detail {

inline constexpr std::uint64_t kInitStream = 0xC0FFEE0000000001ull;
inline constexpr double kDivergenceBound = 1e6;

inline ComponentSet initial_state(const SamplerConfig& config, const MixingOperator& op, const RngStream& rng) {
  if (const auto* provided = std::get_if<ComponentSet>(&config.init)) {
    op.check_components(*provided);
    return *provided;
  }
  const auto& box = std::get<UniformBox>(config.init);
  require(box.lo < box.hi, Errc::invalid_argument, "initialization box must have lo < hi");
  RngStream init = rng.substream(kInitStream);
  ComponentSet x(op.k(), Signal(op.component_shape()));
  for (auto& c : x)
    for (double& v : c.data()) v = init.uniform(box.lo, box.hi);
  return x;
}

inline void check_state(const ComponentSet& x, std::size_t level, std::size_t step) {
  for (const auto& c : x)
    for (double v : c.data())
      if (!std::isfinite(v) || std::abs(v) > kDivergenceBound)
        throw Error(Errc::sampler_diverged,
                    "state left the finite range at level " + std::to_string(level) + " step " + std::to_string(step));
}

inline double squared_norm(const ComponentSet& x) {
  double s = 0.0;
  for (const auto& c : x) s += c.squared_norm();
  return s;
}

enum class Dynamics { Langevin, Deterministic };

inline SeparationResult anneal(const PriorSet& priors, const MixingOperator& op, const Signal& m,
                               const SamplerConfig& config, const RngStream& rng, Dynamics dynamics) {
  config.validate();
  op.check_mixture(m);
  priors.check(op);
  const auto& schedule = config.schedule;
  const std::size_t levels = schedule.levels();
  const std::size_t steps = config.anneal.steps_per_level;

  SeparationResult out;
  out.components = initial_state(config, op, rng);
  ComponentSet& x = out.components;
  if (config.record_trace) out.trace.entries.reserve(levels * steps);

  ComponentSet prior(x.size());
  for (std::size_t level = 0; level < levels; ++level) {
    const double sigma = schedule.sigma(level);
    const double eta = step_size(schedule, level, config.anneal.delta);
    const double gamma2 = config.anneal.gamma_coupling.gamma2(sigma);
    const double noise = std::sqrt(2.0 * eta);
    RngStream level_rng = rng.substream(level);
    for (std::size_t step = 0; step < steps; ++step) {
      for (std::size_t i = 0; i < x.size(); ++i) prior[i] = priors.at(i).score(x[i], sigma);
      ComponentSet like = likelihood_grad(m, x, op, gamma2);
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto xv = x[i].data();
        auto ps = prior[i].data();
        auto lg = like[i].data();
        if (dynamics == Dynamics::Langevin) {
          for (std::size_t p = 0; p < xv.size(); ++p) xv[p] += eta * (ps[p] + lg[p]) + noise * level_rng.normal();
        } else {
          for (std::size_t p = 0; p < xv.size(); ++p) xv[p] += eta * (ps[p] + lg[p]);
        }
      }
      check_state(x, level, step);
      if (config.record_trace) {
        TraceEntry e;
        e.level = level;
        e.step = step;
        e.eta = eta;
        e.gamma2 = gamma2;
        e.recon_sq = m.squared_distance(op.apply(x));
        e.prior_sq = squared_norm(prior);
        e.like_sq = squared_norm(like);
        e.snr = eta / 4.0 * (e.prior_sq + e.like_sq);
        out.trace.entries.push_back(e);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Annealed Langevin posterior sampling over the components of m.
///
/// Level i runs T steps with eta_i = delta sigma_i^2 / sigma_L^2 and the
/// configured gamma^2 coupling. Initialization draws from rng.substream of a
/// fixed init key; level i draws its noise from rng.substream(i).
inline SeparationResult basis_separate(const PriorSet& priors, const MixingOperator& op, const Signal& m,
                                       const SamplerConfig& config, const RngStream& rng) {
  return detail::anneal(priors, op, m, config, rng, detail::Dynamics::Langevin);
}

struct PlainAscent {
  double lambda = 0.0;
};
struct AnnealedDeterministic {};
using BaselineMode = std::variant<PlainAscent, AnnealedDeterministic>;

/// Deterministic counterparts of the sampler.
///
/// PlainAscent runs L*T steps of x <- x + eta grad[log p(x) - lambda ||g(x) - m||^2]
/// at the final noise level with eta = delta. AnnealedDeterministic is the
/// full annealed schedule without the injected noise.
inline SeparationResult baseline_ascend(const PriorSet& priors, const MixingOperator& op, const Signal& m,
                                        const BaselineMode& mode, const SamplerConfig& config,
                                        const RngStream& rng) {
  if (std::holds_alternative<AnnealedDeterministic>(mode))
    return detail::anneal(priors, op, m, config, rng, detail::Dynamics::Deterministic);

  const double lambda = std::get<PlainAscent>(mode).lambda;
  require(lambda >= 0 && std::isfinite(lambda), Errc::invalid_argument, "lambda must be non-negative");
  config.validate();
  op.check_mixture(m);
  priors.check(op);
  const double sigma = config.schedule.last();
  const double eta = config.anneal.delta;
  const std::size_t level = config.schedule.levels() - 1;
  const std::size_t total = config.schedule.levels() * config.anneal.steps_per_level;

  SeparationResult out;
  out.components = detail::initial_state(config, op, rng);
  ComponentSet& x = out.components;
  if (config.record_trace) out.trace.entries.reserve(total);
  ComponentSet prior(x.size());
  for (std::size_t step = 0; step < total; ++step) {
    for (std::size_t i = 0; i < x.size(); ++i) prior[i] = priors.at(i).score(x[i], sigma);
    // grad of -lambda ||g(x) - m||^2 is 2 lambda G^T (m - g(x))
    ComponentSet like = op.adjoint(m - op.apply(x));
    for (auto& c : like) c *= 2.0 * lambda;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i].axpy(eta, prior[i]);
      x[i].axpy(eta, like[i]);
    }
    detail::check_state(x, level, step);
    if (config.record_trace) {
      TraceEntry e;
      e.level = level;
      e.step = step;
      e.eta = eta;
      e.gamma2 = lambda > 0 ? 1.0 / (2.0 * lambda) : std::numeric_limits<double>::infinity();
      e.recon_sq = m.squared_distance(op.apply(x));
      e.prior_sq = detail::squared_norm(prior);
      e.like_sq = detail::squared_norm(like);
      e.snr = eta / 4.0 * (e.prior_sq + e.like_sq);
      out.trace.entries.push_back(e);
    }
  }
  return out;
}

struct LevelSnr {
  std::size_t level = 0;
  double eta = 0.0;
  double prior_term = 0.0;       // eta/4 * mean ||grad log p_sigma||^2
  double likelihood_term = 0.0;  // eta/4 * mean ||grad log p_gamma(m|x)||^2
  std::size_t steps = 0;
};

/// Per-level means of the two summands of the SNR decomposition.
inline std::vector<LevelSnr> snr_trace(const Trace& trace) {
  require(!trace.entries.empty(), Errc::invalid_argument, "trace is empty");
  std::vector<LevelSnr> out;
  for (const auto& e : trace.entries) {
    if (out.empty() || out.back().level != e.level) {
      out.push_back({});
      out.back().level = e.level;
      out.back().eta = e.eta;
    }
    auto& s = out.back();
    s.prior_term += e.eta / 4.0 * e.prior_sq;
    s.likelihood_term += e.eta / 4.0 * e.like_sq;
    ++s.steps;
  }
  for (auto& s : out) {
    s.prior_term /= static_cast<double>(s.steps);
    s.likelihood_term /= static_cast<double>(s.steps);
  }
  return out;
}

struct BestOfN {
  ComponentSet components;             // the selected run
  std::size_t selected = 0;            // its chain index
  std::vector<double> scores;          // sum_i log p_{sigma_L}(x_i) per chain
  std::vector<ComponentSet> samples;   // every chain's output
};

/// Runs n independent chains (chain j uses rng.substream(j)) and keeps the one
/// with the highest prior log-density at sigma_L. Ties go to the lowest index.
inline BestOfN best_of_n(const PriorSet& priors, const MixingOperator& op, const Signal& m, std::size_t n,
                         const SamplerConfig& config, const RngStream& rng, std::size_t jobs = 1) {
  require(n >= 1, Errc::invalid_argument, "best-of-n needs n >= 1");
  require(priors.has_log_density(), Errc::unsupported_prior, "best-of-n selection needs a prior log-density");
  SamplerConfig chain_config = config;
  chain_config.record_trace = false;
  BestOfN out;
  out.samples.resize(n);
  out.scores.resize(n);
  const double sigma_last = config.schedule.last();
  parallel_for(n, jobs, [&](std::size_t j) {
    out.samples[j] = basis_separate(priors, op, m, chain_config, rng.substream(j)).components;
    out.scores[j] = priors.log_density(out.samples[j], sigma_last);
  });
  for (std::size_t j = 1; j < n; ++j)
    if (out.scores[j] > out.scores[out.selected]) out.selected = j;
  out.components = out.samples[out.selected];
  return out;
}

}  // namespace basis
