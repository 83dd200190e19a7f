#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pcmm/inference.hpp"
#include "pcmm/simgen.hpp"

using namespace pcmm;

namespace {

PanelDataset simulated(std::size_t n, std::uint64_t seed, double rho = 0.5) {
  SimConfig cfg;
  cfg.n = n;
  cfg.rho = rho;
  auto rng = detail::substream(seed, 0);
  return gen_dataset(cfg, rng);
}

void expect_valid(const InferenceResult& r) {
  const auto d = r.cov.rows();
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) EXPECT_NEAR(r.cov(a, b), r.cov(b, a), 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r.cov);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
  for (std::size_t c = 0; c < r.se.size(); ++c) {
    EXPECT_NEAR(r.se[c], std::sqrt(r.cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c))), 1e-15);
    EXPECT_GE(r.wald_p[c], 0.0);
    EXPECT_LE(r.wald_p[c], 1.0);
  }
}

}  // namespace

TEST(Bootstrap, IdenticalSubjectsGiveZeroSe) {
  std::istringstream in(
      "id,time,n1,z1\n"
      "a,1,1,0.5\na,3,4,0.5\n"
      "b,1,1,0.5\nb,3,4,0.5\n"
      "c,1,1,0.5\nc,3,4,0.5\n");
  const auto data = read_panel_csv(in);
  const auto res = bootstrap_se(data, FitConfig{}, 20, 1);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].replicates, 20u);
  for (double se : res[0].se) EXPECT_EQ(se, 0.0);
}

TEST(Bootstrap, DeterministicGivenSeed) {
  const auto data = simulated(80, 3);
  const auto a = bootstrap_se(data, FitConfig{}, 30, 7);
  const auto b = bootstrap_se(data, FitConfig{}, 30, 7, 1);
  const auto c = bootstrap_se(data, FitConfig{}, 30, 8);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(a[j].se, b[j].se);
    EXPECT_TRUE(a[j].cov == b[j].cov);
    EXPECT_NE(a[j].se, c[j].se);
    expect_valid(a[j]);
  }
}

TEST(Bootstrap, RejectsTooFewReplicates) {
  const auto data = simulated(20, 1);
  EXPECT_THROW(bootstrap_se(data, FitConfig{}, 1, 1), std::invalid_argument);
}

TEST(Bootstrap, SeShrinksAsRootN) {
  auto mean_se = [](std::size_t n) {
    std::array<double, 4> acc{};
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
      const auto res = bootstrap_se(simulated(n, 100 + rep), FitConfig{}, 100, rep);
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t c = 0; c < 2; ++c) acc[2 * j + c] += res[j].se[c] / 3.0;
    }
    return acc;
  };
  const auto small = mean_se(150);
  const auto large = mean_se(300);
  for (std::size_t k = 0; k < 4; ++k) {
    const double ratio = large[k] / small[k];
    EXPECT_GE(ratio, 0.6) << "coefficient " << k;
    EXPECT_LE(ratio, 0.82) << "coefficient " << k;
  }
}

TEST(Sandwich, AgreesWithBootstrap) {
  const auto data = simulated(200, 42, 0.0);
  const auto fits = fit(data);
  const auto boot = bootstrap_se(data, fits, FitConfig{}, 200, 9);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto sw = sandwich_se(data, fits[j]);
    expect_valid(sw);
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(sw.se[c] / boot[j].se[c], 1.0, 0.25) << "cause " << j << " coef " << c;
  }
}

TEST(Sandwich, ConstantCovariateIsSingular) {
  std::istringstream in("id,time,n1,z1\na,1,1,2\na,2,3,2\nb,1,0,2\nb,3,2,2\n");
  const auto data = read_panel_csv(in);
  const auto fits = fit(data);
  ASSERT_NE(fits[0].status, FitStatus::failed) << fits[0].message;
  EXPECT_THROW(sandwich_se(data, fits[0]), NumericError);
}

TEST(Sandwich, ScalesInverselyWithCovariates) {
  const auto data = simulated(150, 11);
  auto scaled = data;
  const double factor = 2.5;
  for (auto& s : scaled.subjects)
    for (auto& z : s.covariates) z *= factor;
  FitConfig cfg;
  cfg.epsilon = 1e-13;
  cfg.max_iter = 5000;
  const auto f1 = fit(data, cfg);
  const auto f2 = fit(scaled, cfg);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto a = sandwich_se(data, f1[j]);
    const auto b = sandwich_se(scaled, f2[j]);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(b.se[c] * factor / a.se[c], 1.0, 1e-5);
      EXPECT_NEAR(a.wald_p[c], b.wald_p[c], 1e-5);
    }
  }
}

TEST(WaldP, Reference) {
  EXPECT_NEAR(detail::wald_p_value(1.959963984540054, 1.0), 0.05, 1e-12);
  EXPECT_EQ(detail::wald_p_value(0.0, 0.0), 1.0);
  EXPECT_EQ(detail::wald_p_value(0.3, 0.0), 0.0);
}

// When every distinct time already holds enough subjects the pool never widens.
TEST(Sandwich, TiedTimesUseExactPerTimeRatio) {
  SimConfig cfg;
  cfg.n = 100;
  auto rng = detail::substream(31, 0);
  auto data = gen_dataset(cfg, rng);
  for (auto& s : data.subjects) {
    for (std::size_t p = 0; p < s.visits(); ++p) s.times[p] = static_cast<double>(p + 1);
  }
  const auto fits = fit(data);
  const auto g = aggregate(data, 0);
  for (const auto b : g.b) ASSERT_GE(b, 10u);
  const auto exact = sandwich_se(data, fits[0], 1);
  const auto pooled = sandwich_se(data, fits[0]);
  EXPECT_EQ(exact.se, pooled.se);
  expect_valid(exact);
}
