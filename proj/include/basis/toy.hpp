#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "basis/core.hpp"
#include "basis/priors.hpp"
#include "basis/sampler.hpp"
#include "basis/tasks.hpp"

namespace basis::toy {

/// 8x8 "bars" images: each has 2 or 3 horizontal or vertical strokes of
/// length >= 3, scaled by one intensity drawn from U(0.6, 1). Labels are the
/// stroke count.
inline std::vector<LabeledSignal> bars(std::size_t count, std::uint64_t seed, std::size_t side = 8) {
  require(side >= 4, Errc::invalid_argument, "bars images need side >= 4");
  std::vector<LabeledSignal> out;
  const RngStream root(seed);
  for (std::size_t n = 0; n < count; ++n) {
    RngStream rng = root.substream(n);
    Signal img(Shape{1, side, side});
    const std::size_t strokes = 2 + rng.below(2);
    for (std::size_t s = 0; s < strokes; ++s) {
      const bool horizontal = rng.uniform() < 0.5;
      const std::size_t line = rng.below(side);
      const std::size_t start = rng.below(side - 3 + 1);
      const std::size_t len = 3 + rng.below(side - start - 3 + 1);
      for (std::size_t t = start; t < start + len; ++t) {
        const std::size_t r = horizontal ? line : t, c = horizontal ? t : line;
        img[r * side + c] = 1.0;
      }
    }
    img *= rng.uniform(0.6, 1.0);
    out.push_back({std::move(img), static_cast<int>(strokes)});
  }
  return out;
}

/// Colored variant of `bars`: shape [3, side, side], every stroke painted with
/// its own RGB color drawn from U(0.2, 1) per channel.
inline std::vector<LabeledSignal> color_bars(std::size_t count, std::uint64_t seed, std::size_t side = 8) {
  require(side >= 4, Errc::invalid_argument, "bars images need side >= 4");
  std::vector<LabeledSignal> out;
  const RngStream root(seed);
  const std::size_t plane = side * side;
  for (std::size_t n = 0; n < count; ++n) {
    RngStream rng = root.substream(n);
    Signal img(Shape{3, side, side});
    const std::size_t strokes = 2 + rng.below(2);
    for (std::size_t s = 0; s < strokes; ++s) {
      const bool horizontal = rng.uniform() < 0.5;
      const std::size_t line = rng.below(side);
      const std::size_t start = rng.below(side - 3 + 1);
      const std::size_t len = 3 + rng.below(side - start - 3 + 1);
      double rgb[3];
      for (double& c : rgb) c = rng.uniform(0.2, 1.0);
      for (std::size_t t = start; t < start + len; ++t) {
        const std::size_t r = horizontal ? line : t, c = horizontal ? t : line;
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + r * side + c] = rgb[ch];
      }
    }
    out.push_back({std::move(img), static_cast<int>(strokes)});
  }
  return out;
}

inline std::vector<Signal> signals(const std::vector<LabeledSignal>& data) {
  std::vector<Signal> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(d.signal);
  return out;
}

/// N points uniform in [0,1]^d, the well-separated Dirac dataset.
inline std::vector<Signal> uniform_points(std::size_t count, std::size_t dim, std::uint64_t seed) {
  const RngStream root(seed);
  std::vector<Signal> out;
  for (std::size_t n = 0; n < count; ++n) {
    RngStream rng = root.substream(n);
    Signal s(Shape{dim});
    for (double& v : s.data()) v = rng.uniform();
    out.push_back(std::move(s));
  }
  return out;
}

inline double min_pairwise_distance(const std::vector<Signal>& points) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) best = std::min(best, std::sqrt(points[i].squared_distance(points[j])));
  return best;
}

/// Two-component isotropic mixture in the plane used for score-network
/// training: means (-1, -1) and (1, 1), weights 0.5, component variance v.
inline std::shared_ptr<GmmPrior> gmm2d(double variance = 0.05) {
  return std::make_shared<GmmPrior>(std::vector<double>{0.5, 0.5},
                                    std::vector<Signal>{Signal::vec({-1.0, -1.0}), Signal::vec({1.0, 1.0})},
                                    std::vector<double>{variance, variance});
}

inline std::vector<Signal> sample_prior(const ScorePrior& prior, double sigma, std::size_t count, std::uint64_t seed) {
  const RngStream root(seed);
  std::vector<Signal> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    RngStream rng = root.substream(n);
    auto s = prior.sample(sigma, rng);
    require(s.has_value(), Errc::unsupported_prior, "prior cannot be sampled");
    out.push_back(std::move(*s));
  }
  return out;
}

/// Scalar two-component separation with a shared 1-D mixture prior. The
/// posterior has a broad basin at the "blend" x1 = x2 = 0.5 and narrow basins
/// at the separated solutions (0, 1) and (1, 0).
struct AblationBenchmark {
  std::shared_ptr<GmmPrior> prior;
  MixingOperator op;
  Signal mixture;
  SamplerConfig config;
  double lambda;  // penalty weight of the plain-ascent objective
};

inline AblationBenchmark ablation_benchmark() {
  auto prior = std::make_shared<GmmPrior>(
      std::vector<double>{0.3, 0.35, 0.35},
      std::vector<Signal>{Signal::vec({0.5}), Signal::vec({0.0}), Signal::vec({1.0})},
      std::vector<double>{0.1, 1e-4, 1e-4});
  SamplerConfig config;
  config.init = UniformBox{0.0, 1.0};
  config.record_trace = true;
  const double sl = config.schedule.last();
  return {prior, MixingOperator::equal_mix(2, Shape{1}), Signal::vec({0.5}), config, 1.0 / (2.0 * sl * sl)};
}

/// log p(x) + log N(m; g(x), sigma_L^2) at the final noise level, up to the
/// normalizer of the likelihood.
inline double final_log_posterior(const AblationBenchmark& b, const ComponentSet& x) {
  const double sl = b.config.schedule.last();
  double lp = 0.0;
  for (const auto& c : x) lp += *b.prior->log_density(c, sl);
  return lp - b.mixture.squared_distance(b.op.apply(x)) / (2.0 * sl * sl);
}

}  // namespace basis::toy
