#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <thread>

#include "basis/core.hpp"
#include "basis/parallel.hpp"

using namespace basis;

TEST(Shape, RejectsZeroExtentsAndEmptyRank) {
  EXPECT_THROW(Shape({}), Error);
  EXPECT_THROW(Shape({3, 0}), Error);
  Shape s{1, 28, 28};
  EXPECT_EQ(s.size(), 784u);
  EXPECT_EQ(s.str(), "[1,28,28]");
}

TEST(Signal, DataLengthMustMatchShape) {
  EXPECT_THROW(Signal(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
  Signal s(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(s.squared_norm(), 30.0);
}

TEST(Signal, ArithmeticIsShapeChecked) {
  Signal a(Shape{4}, 1.0), b(Shape{2, 2}, 1.0);
  EXPECT_THROW(a += b, Error);
  try {
    a.dot(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
  Signal c = a + 2.0 * a;
  EXPECT_DOUBLE_EQ(c[3], 3.0);
  c.axpy(-3.0, a);
  EXPECT_DOUBLE_EQ(c.squared_norm(), 0.0);
}

TEST(GeometricSchedule, SecondLevelOfDefaultSchedule) {
  auto s = geometric_schedule(1.0, 0.01, 10);
  EXPECT_NEAR(s.sigma(1), std::pow(10.0, -2.0 / 9.0), 1e-15);
  EXPECT_NEAR(s.sigma(1), 0.59948, 1e-5);
}

TEST(GeometricSchedule, EndpointsAreExact) {
  auto s = geometric_schedule(1.0, 0.01, 10);
  EXPECT_EQ(s.levels(), 10u);
  EXPECT_EQ(s.sigma(0), 1.0);
  EXPECT_EQ(s.sigma(9), 0.01);
}

TEST(GeometricSchedule, ConstantScheduleWhenEndpointsMatch) {
  auto s = geometric_schedule(1.0, 1.0, 5);
  for (double v : s.sigmas()) EXPECT_EQ(v, 1.0);
}

TEST(GeometricSchedule, RatioIsConstant) {
  for (auto [a, b, l] : {std::tuple{1.0, 0.01, 10}, std::tuple{2.5, 0.003, 37}, std::tuple{1.0, 0.5, 2}}) {
    auto s = geometric_schedule(a, b, static_cast<std::size_t>(l));
    const double r0 = s.sigma(1) / s.sigma(0);
    for (std::size_t i = 1; i + 1 < s.levels(); ++i) EXPECT_NEAR(s.sigma(i + 1) / s.sigma(i), r0, 1e-12 * r0);
  }
}

TEST(GeometricSchedule, RejectsBadArguments) {
  EXPECT_THROW(geometric_schedule(0.0, 0.01, 10), Error);
  EXPECT_THROW(geometric_schedule(1.0, -1.0, 10), Error);
  EXPECT_THROW(geometric_schedule(1.0, 0.01, 1), Error);
  EXPECT_THROW(geometric_schedule(0.01, 1.0, 10), Error);
}

TEST(StepSize, FinalLevelIsDelta) {
  auto s = geometric_schedule(1.0, 0.01, 10);
  EXPECT_DOUBLE_EQ(step_size(s, 9, 2e-5), 2e-5);
  EXPECT_NEAR(step_size(s, 0, 2e-5), 0.2, 1e-15);
  EXPECT_THROW(step_size(s, 10, 2e-5), Error);
}

TEST(StepSize, MonotoneNonIncreasing) {
  auto s = geometric_schedule(1.0, 0.01, 25);
  for (std::size_t i = 0; i + 1 < s.levels(); ++i) EXPECT_GE(step_size(s, i, 1e-3), step_size(s, i + 1, 1e-3));
}

TEST(AnnealConfig, DefaultsMatchPublishedSettings) {
  AnnealConfig c;
  EXPECT_EQ(c.delta, 2e-5);
  EXPECT_EQ(c.steps_per_level, 100u);
  EXPECT_EQ(c.gamma_coupling.mode, GammaCoupling::Mode::EqualToSigmaSquared);
  EXPECT_DOUBLE_EQ(c.gamma_coupling.gamma2(0.1), 0.01);
  EXPECT_DOUBLE_EQ(GammaCoupling::fixed(0.3).gamma2(0.1), 0.3);
  AnnealConfig bad;
  bad.delta = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(RngStream, SameSeedSameSequence) {
  RngStream a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs |= x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(RngStream, SubstreamsDependOnlyOnKey) {
  RngStream root(7);
  RngStream s1 = root.substream(3);
  root.normal();  // consuming the parent does not shift substreams
  RngStream s2 = root.substream(3);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s1.next_u64(), s2.next_u64());
  EXPECT_NE(root.substream(3).next_u64(), root.substream(4).next_u64());
}

TEST(RngStream, UniformAndNormalMoments) {
  RngStream r(1);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.015);
}

TEST(RngStream, BelowIsUnbiasedAndInRange) {
  RngStream r(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
  EXPECT_THROW(r.below(0), Error);
}

TEST(RngStream, ParallelUseOfSubstreamsIsOrderIndependent) {
  RngStream root(11);
  std::vector<double> serial(16), threaded(16);
  for (std::size_t j = 0; j < 16; ++j) {
    RngStream s = root.substream(j);
    for (int i = 0; i < 100; ++i) serial[j] += s.normal();
  }
  parallel_for(16, 4, [&](std::size_t j) {
    RngStream s = root.substream(j);
    for (int i = 0; i < 100; ++i) threaded[j] += s.normal();
  });
  EXPECT_EQ(serial, threaded);
}

TEST(ParallelFor, PropagatesFirstException) {
  EXPECT_THROW(parallel_for(8, 3, [](std::size_t i) {
                 if (i == 5) throw Error(Errc::invalid_argument, "boom");
               }),
               Error);
  std::vector<int> hit(100, 0);
  parallel_for(100, 8, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
}

TEST(Errors, NamesAreStable) {
  EXPECT_EQ(errc_name(Errc::format_error), "E_FORMAT");
  EXPECT_EQ(errc_name(Errc::sampler_diverged), "E_SAMPLER_DIVERGED");
  EXPECT_EQ(errc_name(Errc::too_large), "E_TOO_LARGE");
}
