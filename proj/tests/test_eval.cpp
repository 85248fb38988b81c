#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "basis/eval.hpp"
#include "basis/toy.hpp"

using namespace basis;

namespace {

Signal noise_signal(const Shape& s, RngStream& rng, double mean = 0.0, double sd = 1.0) {
  Signal x(s);
  for (double& v : x.data()) v = mean + sd * rng.normal();
  return x;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::io_error;
}

}  // namespace

TEST(Psnr, KnownValues) {
  Signal a(Shape{4}, 0.0), b(Shape{4}, 0.1);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
  EXPECT_NEAR(psnr(a, Signal(Shape{4}, 0.5)), 10.0 * std::log10(4.0), 1e-12);
  EXPECT_NEAR(psnr(a, b, 255.0), 10.0 * std::log10(255.0 * 255.0 / 0.01), 1e-9);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_EQ(psnr_from_mse(1e-30), kPsnrCap);
  EXPECT_THROW(psnr_from_mse(0.1, 0.0), Error);
}

TEST(Psnr, SymmetricAndDecreasingInError) {
  RngStream rng(1);
  Signal a = noise_signal(Shape{10}, rng), b = noise_signal(Shape{10}, rng);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  double prev = kPsnrCap + 1;
  for (double e : {0.001, 0.01, 0.1, 0.5}) {
    const double p = psnr(a, a + Signal(Shape{10}, e));
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Matching, RecoversSwappedOrder) {
  Signal x0(Shape{3}, 0.0), x1(Shape{3}, 1.0);
  EXPECT_EQ(match_components({x1, x0}, {x0, x1}), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(match_components({x0, x1}, {x0, x1}), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(match_components({x1}, {x0}), (std::vector<std::size_t>{0}));
  auto aligned = apply_permutation({x1, x0}, {1, 0});
  EXPECT_EQ(aligned[0].values(), x0.values());
}

TEST(Matching, AgreesWithBruteForceAssignmentCost) {
  RngStream rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    ComponentSet est, truth;
    for (int i = 0; i < 4; ++i) {
      est.push_back(noise_signal(Shape{5}, rng));
      truth.push_back(noise_signal(Shape{5}, rng));
    }
    auto perm = match_components(est, truth);
    auto cost = [&](const std::vector<std::size_t>& p) {
      double c = 0;
      for (std::size_t i = 0; i < 4; ++i) c += truth[i].squared_distance(est[p[i]]);
      return c;
    };
    std::vector<std::size_t> p{0, 1, 2, 3};
    double best = 1e300;
    do best = std::min(best, cost(p));
    while (std::next_permutation(p.begin(), p.end()));
    EXPECT_DOUBLE_EQ(cost(perm), best);
  }
}

TEST(Matching, MoreThanFourComponentsIsUnsupported) {
  ComponentSet five(5, Signal(Shape{2}));
  EXPECT_EQ(code_of([&] { match_components(five, five); }), Errc::unsupported_size);
  EXPECT_EQ(code_of([&] { match_components({Signal(Shape{2})}, five); }), Errc::invalid_argument);
}

TEST(ReconstructionError, CountsElementsInsideTheQuantum) {
  auto op = MixingOperator::equal_mix(2, Shape{4});
  Signal m = Signal::vec({0.5, 0.5, 0.5, 0.5});
  ComponentSet x{Signal::vec({0.5, 0.5, 0.5, 0.5}), Signal::vec({0.5, 0.5 + 1.0 / 255, 0.5 + 4.0 / 255, 0.3})};
  auto r = reconstruction_error(m, x, op);
  EXPECT_EQ(r.elements, 4u);
  EXPECT_EQ(r.within_quantum, 2u);
  EXPECT_NEAR(r.max_abs, 0.1, 1e-15);
  const double e1 = 0.5 / 255, e2 = 2.0 / 255;
  EXPECT_NEAR(r.mean_sq, (e1 * e1 + e2 * e2 + 0.01) / 4.0, 1e-15);
}

TEST(TupleOracle, SingleComponentMatchesLogisticClosedForm) {
  std::vector<Signal> data{Signal::vec({0.0}), Signal::vec({1.0})};
  const double gamma2 = 0.02, sigma2 = 0.03, v = gamma2 + sigma2;
  auto post = tuple_posterior_oracle(data, Signal::vec({0.25}), {1.0}, gamma2, sigma2);
  const double expected = 1.0 / (1.0 + std::exp(-(0.5625 - 0.0625) / (2.0 * v)));
  EXPECT_NEAR(post.prob({0}), expected, 1e-14);
  EXPECT_NEAR(post.prob({1}), 1.0 - expected, 1e-14);
}

TEST(TupleOracle, SymmetricMixtureSplitsEvenlyBetweenOrders) {
  auto data = toy::bars(8, 1);
  std::vector<Signal> pts;
  for (auto& d : data) pts.push_back(d.signal);
  Signal m = 0.5 * (pts[2] + pts[5]);
  auto post = tuple_posterior_oracle(pts, m, {0.5, 0.5}, 1e-4, 1e-4);
  EXPECT_NEAR(post.prob({2, 5}), post.prob({5, 2}), 1e-14);
  EXPECT_NEAR(post.prob({2, 5}) + post.prob({5, 2}), 1.0, 1e-6);
  double total = 0;
  for (double p : post.probs) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(TupleOracle, SinglePointDatasetIsCertain) {
  auto post = tuple_posterior_oracle({Signal::vec({0.3, 0.7})}, Signal::vec({0.0, 0.0}), {0.5, 0.5}, 0.01, 0.01);
  ASSERT_EQ(post.size(), 1u);
  EXPECT_DOUBLE_EQ(post.probs[0], 1.0);
}

TEST(TupleOracle, CovariantUnderDatasetPermutation) {
  RngStream rng(4);
  std::vector<Signal> pts;
  for (int i = 0; i < 5; ++i) pts.push_back(noise_signal(Shape{3}, rng, 0.5, 0.2));
  Signal m = noise_signal(Shape{3}, rng, 0.5, 0.1);
  const std::vector<std::size_t> pi{3, 0, 4, 1, 2};
  std::vector<Signal> permuted;
  for (auto i : pi) permuted.push_back(pts[i]);
  auto a = tuple_posterior_oracle(pts, m, {0.5, 0.5}, 0.01, 0.02);
  auto b = tuple_posterior_oracle(permuted, m, {0.5, 0.5}, 0.01, 0.02);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b.prob({i, j}), a.prob({pi[i], pi[j]}), 1e-14);
}

TEST(TupleOracle, EnumerationLimitIsEnforced) {
  EXPECT_EQ(tuple_count(1000, 2), 1000000u);
  EXPECT_EQ(code_of([] { tuple_count(1001, 2); }), Errc::too_large);
  EXPECT_EQ(code_of([] { tuple_count(10, 7); }), Errc::too_large);
  std::vector<Signal> big(1001, Signal::vec({0.0}));
  EXPECT_EQ(code_of([&] { tuple_posterior_oracle(big, Signal::vec({0.0}), {0.5, 0.5}, 0.1, 0.1); }),
            Errc::too_large);
  EXPECT_EQ(code_of([] { tuple_posterior_oracle({Signal::vec({0.0})}, Signal::vec({0.0}), {1.0}, 0.0, 0.0); }),
            Errc::degenerate_density);
}

TEST(TupleOracle, SnapsToNearestPoint) {
  std::vector<Signal> pts{Signal::vec({0.0}), Signal::vec({1.0}), Signal::vec({2.0})};
  EXPECT_EQ(snap_to_dataset({Signal::vec({1.4}), Signal::vec({-3.0}), Signal::vec({0.5})}, pts),
            (std::vector<std::size_t>{1, 0, 0}));
}

TEST(TotalVariation, ExamplesAndMetricAxioms) {
  auto p = tuple_frequencies({{0}, {0}, {1}, {2}}, 3, 1);
  auto q = tuple_frequencies({{1}, {1}, {1}, {1}}, 3, 1);
  auto r = tuple_frequencies({{2}, {2}, {0}, {1}}, 3, 1);
  EXPECT_DOUBLE_EQ(p.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(tv_distance(p, p), 0.0);
  EXPECT_DOUBLE_EQ(tv_distance(p, q), 0.75);
  EXPECT_DOUBLE_EQ(tv_distance(p, q), tv_distance(q, p));
  EXPECT_LE(tv_distance(p, r), tv_distance(p, q) + tv_distance(q, r) + 1e-15);
  auto disjoint_a = tuple_frequencies({{0}}, 3, 1), disjoint_b = tuple_frequencies({{2}}, 3, 1);
  EXPECT_DOUBLE_EQ(tv_distance(disjoint_a, disjoint_b), 1.0);
  EXPECT_THROW(tv_distance(p, tuple_frequencies({{0, 0}}, 3, 2)), Error);
  EXPECT_THROW(tuple_frequencies({{3}}, 3, 1), Error);
}

TEST(Mmd, IdenticalSetsGiveZeroAndShiftedSetsAreFar) {
  RngStream rng(5);
  std::vector<Signal> a, b, c;
  for (int i = 0; i < 200; ++i) {
    a.push_back(noise_signal(Shape{1}, rng));
    b.push_back(noise_signal(Shape{1}, rng, 3.0));
    c.push_back(Signal::vec({0.25}));
  }
  EXPECT_NEAR(mmd_rbf(c, c, 1.0), 0.0, 1e-12);
  EXPECT_GT(mmd_rbf(a, b, 1.0), 0.5);
  EXPECT_GT(mmd_rbf(a, b), 0.0);
}

TEST(Mmd, UnbiasedUnderTheNull) {
  RngStream rng(6);
  const int reps = 200;
  double sum = 0, sum2 = 0;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<Signal> a, b;
    for (int i = 0; i < 20; ++i) {
      a.push_back(noise_signal(Shape{2}, rng));
      b.push_back(noise_signal(Shape{2}, rng));
    }
    const double v = mmd_rbf(a, b, 1.0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / reps, se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
  EXPECT_LT(std::abs(mean), 3.0 * se) << mean << " se " << se;
}

TEST(Mmd, RejectsTinySetsAndBadBandwidth) {
  std::vector<Signal> one{Signal::vec({0.0})}, two{Signal::vec({0.0}), Signal::vec({1.0})};
  EXPECT_THROW(mmd_rbf(one, two, 1.0), Error);
  EXPECT_THROW(mmd_rbf(two, two, 0.0), Error);
  EXPECT_THROW(mmd_rbf(two, two, std::nan("")), Error);
}

TEST(GradExperiment, GaussianPriorMatchesClosedForm) {
  const std::size_t d = 16;
  IsotropicGaussianPrior prior(Signal(Shape{d}, 0.2), 1.0);
  auto schedule = geometric_schedule(2.0, 0.05, 6);
  auto stats = grad_proportionality_experiment(prior, schedule, 4000, RngStream(7));
  ASSERT_EQ(stats.size(), 6u);
  for (const auto& s : stats) {
    const double expected = s.sigma * std::sqrt(d / (1.0 + s.sigma * s.sigma));
    EXPECT_NEAR(s.value, expected, 4.0 * s.std_error + 1e-12) << "level " << s.level;
    EXPECT_GT(s.std_error, 0.0);
  }
}

TEST(GradExperiment, DiracPriorPlateausAtRootDimension) {
  auto data = toy::bars(40, 8);
  std::vector<Signal> pts;
  for (auto& d : data) pts.push_back(d.signal);
  EmpiricalDiracPrior prior(pts);
  auto stats = grad_proportionality_experiment(prior, pts, geometric_schedule(0.05, 0.001, 4), 2000, RngStream(8));
  for (const auto& s : stats) EXPECT_NEAR(s.value, 8.0, 4.0 * s.std_error + 0.05) << "level " << s.level;
}

TEST(GradExperiment, PriorWithoutSamplerNeedsADataset) {
  struct NoSampler final : ScorePrior {
    NoSampler() : ScorePrior(false) {}
    Shape s{2};
    const Shape& shape() const override { return s; }
    Signal score(const Signal& x, double) const override { return Signal(x.shape()); }
  } prior;
  EXPECT_EQ(code_of([&] { grad_proportionality_experiment(prior, geometric_schedule(1, 0.1, 3), 10, RngStream(1)); }),
            Errc::unsupported_prior);
  EXPECT_THROW(grad_proportionality_experiment(prior, std::vector<Signal>{}, geometric_schedule(1, 0.1, 3), 10,
                                               RngStream(1)),
               Error);
}

TEST(ScoreCosine, ModelEqualToReferenceGivesOne) {
  IsotropicGaussianPrior prior(Signal(Shape{4}, 0.0), 0.5);
  for (double c : score_cosine_per_level(prior, prior, geometric_schedule(1, 0.1, 3), 50, RngStream(2)))
    EXPECT_NEAR(c, 1.0, 1e-12);
}

TEST(LogDensityReport, SinglePointPriorHasClosedForm) {
  const std::size_t d = 6;
  const double sigma = 0.05;
  Signal point(Shape{d}, 0.4);
  EmpiricalDiracPrior prior({point});
  auto r = log_density_report(prior, {{point, point}}, {point}, sigma);
  const double expected = -0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
  EXPECT_NEAR(r.mean_outputs, expected, 1e-10);
  EXPECT_NEAR(r.mean_test, expected, 1e-10);
  EXPECT_EQ(r.n_outputs, 2u);
  EXPECT_EQ(r.z_score(), 0.0);
}

TEST(LogDensityReport, SameSamplesGiveSameMeans) {
  RngStream rng(9);
  IsotropicGaussianPrior prior(Signal(Shape{3}, 0.0), 1.0);
  std::vector<Signal> test;
  std::vector<ComponentSet> outputs;
  for (int i = 0; i < 30; ++i) {
    test.push_back(noise_signal(Shape{3}, rng));
    outputs.push_back({test.back()});
  }
  auto r = log_density_report(prior, outputs, test, 0.1);
  EXPECT_DOUBLE_EQ(r.mean_outputs, r.mean_test);
  EXPECT_NEAR(r.z_score(), 0.0, 1e-12);
}

TEST(LogDensityReport, PriorWithoutDensityIsUnsupported) {
  struct NoDensity final : ScorePrior {
    NoDensity() : ScorePrior(false) {}
    Shape s{1};
    const Shape& shape() const override { return s; }
    Signal score(const Signal& x, double) const override { return Signal(x.shape()); }
  } prior;
  EXPECT_EQ(code_of([&] { log_density_report(prior, {{Signal::vec({0.0})}}, {Signal::vec({0.0})}, 0.1); }),
            Errc::unsupported_prior);
}

TEST(Report, HistogramCountsEveryCase) {
  auto h = histogram({-5.0, 0.0, 1.9, 2.0, 50.0, 99.99, 100.0, 250.0}, 0.0, 100.0, 50);
  ASSERT_EQ(h.counts.size(), 50u);
  ASSERT_EQ(h.bin_edges.size(), 51u);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, 8u);
  EXPECT_EQ(h.counts[0], 3u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[49], 3u);
  EXPECT_THROW(histogram({}, 1.0, 1.0, 5), Error);
}

TEST(Report, EvaluateCasePoolsComponentErrors) {
  auto op = MixingOperator::equal_mix(2, Shape{2});
  ComponentSet truth{Signal::vec({0.0, 0.0}), Signal::vec({1.0, 1.0})};
  ComponentSet est{Signal::vec({0.9, 0.9}), Signal::vec({0.1, 0.1})};
  auto c = evaluate_case(op.apply(truth), est, truth, op);
  EXPECT_EQ(c.permutation, (std::vector<std::size_t>{1, 0}));
  EXPECT_NEAR(c.component_psnr[0], 20.0, 1e-12);
  EXPECT_NEAR(c.pair_psnr, 20.0, 1e-12);
  EXPECT_EQ(c.recon.within_quantum, 2u);

  MetricReport report;
  report.cases = {c, c};
  EXPECT_NEAR(report.mean_pair_psnr(), 20.0, 1e-12);
  EXPECT_NEAR(report.mean_component_psnr(), 20.0, 1e-12);
  EXPECT_DOUBLE_EQ(report.fraction_within_quantum(), 1.0);
  EXPECT_EQ(report.psnr_histogram().counts[10], 2u);
  EXPECT_EQ(MetricReport{}.mean_pair_psnr(), 0.0);
}
