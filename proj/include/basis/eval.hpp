#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "basis/core.hpp"
#include "basis/priors.hpp"
#include "basis/tasks.hpp"

namespace basis {

inline constexpr double kPsnrCap = 100.0;

inline double mean_squared_error(const Signal& a, const Signal& b) {
  return a.squared_distance(b) / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse, double peak = 1.0) {
  require(peak > 0, Errc::invalid_argument, "peak must be positive");
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

/// 10 log10(peak^2 / MSE), capped at 100 dB for identical inputs.
inline double psnr(const Signal& a, const Signal& b, double peak = 1.0) {
  return psnr_from_mse(mean_squared_error(a, b), peak);
}

/// perm[i] is the index of the estimated component paired with truth[i].
/// Exhaustive over k! orderings; the first optimum in lexicographic order wins.
inline std::vector<std::size_t> match_components(const ComponentSet& estimated, const ComponentSet& truth) {
  require(estimated.size() == truth.size(), Errc::invalid_argument, "component counts differ");
  require(!truth.empty(), Errc::invalid_argument, "component set is empty");
  require(truth.size() <= 4, Errc::unsupported_size, "matching supports k <= 4, got " + std::to_string(truth.size()));
  const std::size_t k = truth.size();
  std::vector<std::vector<double>> cost(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) cost[i][j] = truth[i].squared_distance(estimated[j]);
  std::vector<std::size_t> perm(k), best;
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) c += cost[i][perm[i]];
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline ComponentSet apply_permutation(const ComponentSet& estimated, const std::vector<std::size_t>& perm) {
  ComponentSet out;
  out.reserve(perm.size());
  for (auto j : perm) out.push_back(estimated.at(j));
  return out;
}

struct ReconstructionError {
  double max_abs = 0.0;
  double mean_sq = 0.0;
  std::size_t within_quantum = 0;  // elements with |m - g(x)| < 1/255
  std::size_t elements = 0;
};

inline ReconstructionError reconstruction_error(const Signal& m, const ComponentSet& x, const MixingOperator& op) {
  op.check_mixture(m);
  const Signal g = op.apply(x);
  ReconstructionError r;
  r.elements = m.size();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double e = std::abs(m[i] - g[i]);
    r.max_abs = std::max(r.max_abs, e);
    r.mean_sq += e * e;
    if (e < 1.0 / 255.0) ++r.within_quantum;
  }
  r.mean_sq /= static_cast<double>(m.size());
  return r;
}

// ---------------------------------------------------------------------------
// Discrete tuple posterior
// ---------------------------------------------------------------------------

/// Distribution over k-tuples of dataset indices, enumerated in lexicographic
/// order (the first component varies slowest).
struct TuplePosterior {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }

  std::vector<std::size_t> tuple(std::size_t index) const {
    std::vector<std::size_t> t(k);
    for (std::size_t i = k; i-- > 0;) {
      t[i] = index % n;
      index /= n;
    }
    return t;
  }

  std::size_t index(const std::vector<std::size_t>& t) const {
    require(t.size() == k, Errc::invalid_argument, "tuple has the wrong length");
    std::size_t idx = 0;
    for (auto v : t) {
      require(v < n, Errc::invalid_argument, "tuple entry out of range");
      idx = idx * n + v;
    }
    return idx;
  }

  double prob(const std::vector<std::size_t>& t) const { return probs[index(t)]; }
};

inline constexpr std::size_t kMaxTuples = 1000000;

inline std::size_t tuple_count(std::size_t n, std::size_t k) {
  require(n >= 1 && k >= 1, Errc::invalid_argument, "tuple universe needs n >= 1 and k >= 1");
  std::size_t total = 1;
  for (std::size_t i = 0; i < k; ++i) {
    require(total <= kMaxTuples / n, Errc::too_large,
            std::to_string(n) + "^" + std::to_string(k) + " tuples exceed the enumeration limit of 1e6");
    total *= n;
  }
  return total;
}

/// Exact posterior over dataset tuples for m ~ N(sum_i alpha_i x_{t_i},
/// (gamma^2 + sigma^2 sum_i alpha_i^2) I) under a uniform prior on tuples.
inline TuplePosterior tuple_posterior_oracle(const std::vector<Signal>& dataset, const Signal& m,
                                             const std::vector<double>& alpha, double gamma2, double sigma2) {
  require(!dataset.empty(), Errc::invalid_argument, "dataset is empty");
  require(!alpha.empty(), Errc::invalid_argument, "mixing coefficients are empty");
  require(gamma2 >= 0 && sigma2 >= 0, Errc::invalid_argument, "variances must be non-negative");
  for (const auto& s : dataset) m.check_same(s);
  double a2 = 0.0;
  for (double a : alpha) a2 += a * a;
  const double var = gamma2 + sigma2 * a2;
  require(var > 0, Errc::degenerate_density, "observation variance is zero");

  TuplePosterior post;
  post.n = dataset.size();
  post.k = alpha.size();
  const std::size_t total = tuple_count(post.n, post.k);
  std::vector<double> logp(total);
  Signal g(m.shape());
  for (std::size_t idx = 0; idx < total; ++idx) {
    const auto t = post.tuple(idx);
    std::fill(g.data().begin(), g.data().end(), 0.0);
    for (std::size_t i = 0; i < post.k; ++i) g.axpy(alpha[i], dataset[t[i]]);
    logp[idx] = -m.squared_distance(g) / (2.0 * var);
  }
  const double mx = *std::max_element(logp.begin(), logp.end());
  double z = 0.0;
  post.probs.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    post.probs[i] = std::exp(logp[i] - mx);
    z += post.probs[i];
  }
  for (double& p : post.probs) p /= z;
  return post;
}

/// Nearest dataset index per component (Euclidean, ties to the lowest index).
inline std::vector<std::size_t> snap_to_dataset(const ComponentSet& x, const std::vector<Signal>& dataset) {
  require(!dataset.empty(), Errc::invalid_argument, "dataset is empty");
  std::vector<std::size_t> t;
  t.reserve(x.size());
  for (const auto& c : x) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < dataset.size(); ++j) {
      const double d = c.squared_distance(dataset[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    t.push_back(best);
  }
  return t;
}

inline TuplePosterior tuple_frequencies(const std::vector<std::vector<std::size_t>>& tuples, std::size_t n,
                                        std::size_t k) {
  require(!tuples.empty(), Errc::invalid_argument, "no tuples to count");
  TuplePosterior f;
  f.n = n;
  f.k = k;
  f.probs.assign(tuple_count(n, k), 0.0);
  for (const auto& t : tuples) f.probs[f.index(t)] += 1.0;
  for (double& p : f.probs) p /= static_cast<double>(tuples.size());
  return f;
}

inline double tv_distance(const TuplePosterior& p, const TuplePosterior& q) {
  require(p.n == q.n && p.k == q.k && p.probs.size() == q.probs.size(), Errc::invalid_argument,
          "tuple universes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) s += std::abs(p.probs[i] - q.probs[i]);
  return 0.5 * s;
}

// ---------------------------------------------------------------------------
// Kernel MMD
// ---------------------------------------------------------------------------

/// Median of pairwise Euclidean distances over the pooled samples.
inline double median_heuristic_bandwidth(const std::vector<Signal>& a, const std::vector<Signal>& b) {
  std::vector<const Signal*> pool;
  for (const auto& s : a) pool.push_back(&s);
  for (const auto& s : b) pool.push_back(&s);
  require(pool.size() >= 2, Errc::invalid_argument, "need at least two samples for a bandwidth");
  std::vector<double> d;
  d.reserve(pool.size() * (pool.size() - 1) / 2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::sqrt(pool[i]->squared_distance(*pool[j])));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0 ? *mid : 1.0;
}

/// Unbiased squared MMD with kernel exp(-||x - y||^2 / (2 h^2)).
inline double mmd_rbf(const std::vector<Signal>& a, const std::vector<Signal>& b, double bandwidth) {
  require(a.size() >= 2 && b.size() >= 2, Errc::invalid_argument, "MMD needs at least two samples per set");
  require(bandwidth > 0 && std::isfinite(bandwidth), Errc::invalid_argument, "bandwidth must be positive");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  auto kern = [&](const Signal& x, const Signal& y) { return std::exp(-x.squared_distance(y) * inv); };
  auto within = [&](const std::vector<Signal>& s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) acc += kern(s[i], s[j]);
    const double n = static_cast<double>(s.size());
    return 2.0 * acc / (n * (n - 1.0));
  };
  double cross = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) cross += kern(x, y);
  cross /= static_cast<double>(a.size() * b.size());
  return within(a) + within(b) - 2.0 * cross;
}

inline double mmd_rbf(const std::vector<Signal>& a, const std::vector<Signal>& b) {
  return mmd_rbf(a, b, median_heuristic_bandwidth(a, b));
}

// ---------------------------------------------------------------------------
// Gradient proportionality
// ---------------------------------------------------------------------------

struct LevelGradStat {
  std::size_t level = 0;
  double sigma = 0.0;
  double value = 0.0;        // sigma * sqrt(mean ||score||^2)
  double std_error = 0.0;    // delta-method standard error of value
  double mean_sq_norm = 0.0;
};

/// Draws x ~ p_sigma(level) via `draw` and evaluates sigma * RMS ||score||.
inline std::vector<LevelGradStat> grad_proportionality_experiment(
    const ScorePrior& prior, const NoiseSchedule& schedule, std::size_t samples_per_level, const RngStream& rng,
    const std::function<Signal(double sigma, RngStream&)>& draw) {
  require(samples_per_level >= 2, Errc::invalid_argument, "need at least two samples per level");
  std::vector<LevelGradStat> out;
  for (std::size_t level = 0; level < schedule.levels(); ++level) {
    const double sigma = schedule.sigma(level);
    RngStream r = rng.substream(level);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t s = 0; s < samples_per_level; ++s) {
      const double q = prior.score(draw(sigma, r), sigma).squared_norm();
      sum += q;
      sum2 += q * q;
    }
    const double n = static_cast<double>(samples_per_level);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
    LevelGradStat st;
    st.level = level;
    st.sigma = sigma;
    st.mean_sq_norm = mean;
    st.value = sigma * std::sqrt(mean);
    st.std_error = mean > 0 ? sigma * std::sqrt(var / n) / (2.0 * std::sqrt(mean)) : 0.0;
    out.push_back(st);
  }
  return out;
}

/// Variant for priors that can sample p_sigma themselves.
inline std::vector<LevelGradStat> grad_proportionality_experiment(const ScorePrior& prior,
                                                                  const NoiseSchedule& schedule,
                                                                  std::size_t samples_per_level,
                                                                  const RngStream& rng) {
  RngStream probe(0);
  require(prior.sample(schedule.first(), probe).has_value(), Errc::unsupported_prior,
          "prior cannot sample p_sigma; supply a dataset to perturb");
  return grad_proportionality_experiment(prior, schedule, samples_per_level, rng,
                                         [&](double sigma, RngStream& r) { return *prior.sample(sigma, r); });
}

/// Variant that perturbs dataset points, for priors without a sampler.
inline std::vector<LevelGradStat> grad_proportionality_experiment(const ScorePrior& prior,
                                                                  const std::vector<Signal>& dataset,
                                                                  const NoiseSchedule& schedule,
                                                                  std::size_t samples_per_level,
                                                                  const RngStream& rng) {
  require(!dataset.empty(), Errc::invalid_argument, "dataset is empty");
  return grad_proportionality_experiment(prior, schedule, samples_per_level, rng,
                                         [&](double sigma, RngStream& r) {
                                           Signal x = dataset[r.below(dataset.size())];
                                           for (double& v : x.data()) v += sigma * r.normal();
                                           return x;
                                         });
}

/// Mean cosine similarity between a model's score and a reference score at
/// each level, over x drawn from the reference's own p_sigma.
inline std::vector<double> score_cosine_per_level(const ScorePrior& reference, const ScorePrior& model,
                                                  const NoiseSchedule& schedule, std::size_t samples_per_level,
                                                  const RngStream& rng) {
  require(samples_per_level >= 1, Errc::invalid_argument, "need at least one sample per level");
  std::vector<double> out;
  for (std::size_t level = 0; level < schedule.levels(); ++level) {
    const double sigma = schedule.sigma(level);
    RngStream r = rng.substream(level);
    double total = 0.0;
    for (std::size_t s = 0; s < samples_per_level; ++s) {
      auto x = reference.sample(sigma, r);
      require(x.has_value(), Errc::unsupported_prior, "reference prior cannot be sampled");
      const Signal a = reference.score(*x, sigma), b = model.score(*x, sigma);
      const double denom = std::sqrt(a.squared_norm() * b.squared_norm());
      total += denom > 0 ? a.dot(b) / denom : 0.0;
    }
    out.push_back(total / static_cast<double>(samples_per_level));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log-density report
// ---------------------------------------------------------------------------

struct LogDensityReport {
  double mean_outputs = 0.0;
  double mean_test = 0.0;
  double se_outputs = 0.0;
  double se_test = 0.0;
  std::size_t n_outputs = 0;
  std::size_t n_test = 0;

  /// |difference| / pooled standard error
  double z_score() const {
    const double se = std::sqrt(se_outputs * se_outputs + se_test * se_test);
    return se > 0 ? std::abs(mean_outputs - mean_test) / se : 0.0;
  }
};

namespace detail {

inline void mean_and_se(const std::vector<double>& v, double& mean, double& se) {
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
}

}  // namespace detail

/// Mean log p_{sigma_L} over every separated component and over the test set.
inline LogDensityReport log_density_report(const ScorePrior& prior, const std::vector<ComponentSet>& outputs,
                                           const std::vector<Signal>& test_set, double sigma_last) {
  require(prior.has_log_density(), Errc::unsupported_prior, "prior does not expose a log-density");
  require(!outputs.empty() && !test_set.empty(), Errc::invalid_argument, "log-density report needs samples");
  std::vector<double> a, b;
  for (const auto& set : outputs)
    for (const auto& c : set) a.push_back(*prior.log_density(c, sigma_last));
  for (const auto& s : test_set) b.push_back(*prior.log_density(s, sigma_last));
  LogDensityReport r;
  r.n_outputs = a.size();
  r.n_test = b.size();
  detail::mean_and_se(a, r.mean_outputs, r.se_outputs);
  detail::mean_and_se(b, r.mean_test, r.se_test);
  return r;
}

// ---------------------------------------------------------------------------
// Metric report
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
};

/// Fixed-width bins over [lo, hi]; values outside are clamped into the end bins.
inline Histogram histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  require(bins >= 1 && hi > lo, Errc::invalid_argument, "histogram needs bins >= 1 and hi > lo");
  Histogram h;
  for (std::size_t i = 0; i <= bins; ++i)
    h.bin_edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct CaseMetrics {
  std::vector<double> component_psnr;  // under the matched permutation
  double pair_psnr = 0.0;              // PSNR of the MSE pooled over all components
  std::vector<std::size_t> permutation;
  ReconstructionError recon;
};

inline CaseMetrics evaluate_case(const Signal& m, const ComponentSet& estimated, const ComponentSet& truth,
                                 const MixingOperator& op) {
  CaseMetrics c;
  c.recon = reconstruction_error(m, estimated, op);
  c.permutation = match_components(estimated, truth);
  double pooled = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double mse = mean_squared_error(estimated[c.permutation[i]], truth[i]);
    pooled += mse;
    c.component_psnr.push_back(psnr_from_mse(mse));
  }
  c.pair_psnr = psnr_from_mse(pooled / static_cast<double>(truth.size()));
  return c;
}

struct MetricReport {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<CaseMetrics> cases;
  bool has_ground_truth = true;
  std::optional<double> oracle_tv;
  std::optional<double> mmd;
  std::optional<double> mmd_baseline;
  std::optional<LogDensityReport> log_density;

  std::size_t case_count() const { return cases.size(); }

  std::vector<double> pair_psnrs() const {
    std::vector<double> v;
    for (const auto& c : cases) v.push_back(c.pair_psnr);
    return v;
  }

  double mean_pair_psnr() const {
    if (cases.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : cases) s += c.pair_psnr;
    return s / static_cast<double>(cases.size());
  }

  double mean_component_psnr() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : cases)
      for (double p : c.component_psnr) {
        s += p;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  double fraction_within_quantum() const {
    std::size_t in = 0, total = 0;
    for (const auto& c : cases) {
      in += c.recon.within_quantum;
      total += c.recon.elements;
    }
    return total ? static_cast<double>(in) / static_cast<double>(total) : 0.0;
  }

  Histogram psnr_histogram() const { return histogram(pair_psnrs(), 0.0, kPsnrCap, 50); }
};

}  // namespace basis
