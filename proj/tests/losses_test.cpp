#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "tsep/losses.hpp"

namespace tsep {
namespace {

std::vector<ComplexGrid> random_specs(std::size_t k, int t, int f,
                                      std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<ComplexGrid> out;
  for (std::size_t i = 0; i < k; ++i) {
    ComplexGrid g(t, f);
    for (Eigen::Index j = 0; j < g.size(); ++j) g.data()[j] = {n(rng), n(rng)};
    out.push_back(g);
  }
  return out;
}

std::vector<Waveform> random_waves(std::size_t k, std::size_t n,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 0.3);
  std::vector<Waveform> out;
  for (std::size_t i = 0; i < k; ++i) {
    Waveform w = Waveform::zeros(n);
    for (auto& s : w.samples) s = d(rng);
    out.push_back(w);
  }
  return out;
}

// Scalar-by-scalar recomputations, written independently of the library.
double bce_oracle(const Eigen::MatrixXd& p, const Eigen::MatrixXd& v) {
  double s = 0;
  int count = 0;
  for (int i = 0; i < p.rows(); ++i) {
    for (int j = 0; j < p.cols(); ++j) {
      double q = p(i, j) < 1e-7 ? 1e-7 : (p(i, j) > 1 - 1e-7 ? 1 - 1e-7 : p(i, j));
      s += -(v(i, j) * std::log(q) + (1 - v(i, j)) * std::log(1 - q));
      ++count;
    }
  }
  return s / count;
}

double osl_oracle(const std::vector<ComplexGrid>& est,
                  const std::vector<ComplexGrid>& ref, int p, double eps) {
  double total = 0;
  const int K = static_cast<int>(est.size());
  for (int k = 0; k < K; ++k) {
    for (int f = 0; f < est[0].cols(); ++f) {
      for (int t = 0; t < est[0].rows(); ++t) {
        double num = 0, den = 0;
        for (int j = 0; j < K; ++j) {
          num += std::abs(ref[j](t, f));
          den = std::max(den, std::abs(ref[j](t, f)));
        }
        double w = num / (den + eps);
        double d = std::abs(std::abs(est[k](t, f)) - std::abs(ref[k](t, f)));
        total += w * std::pow(d, p);
      }
    }
  }
  return total / K;
}

TEST(Bce, UnitValues) {
  Eigen::MatrixXd half = Eigen::MatrixXd::Constant(3, 7, 0.5);
  Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(3, 7);
  gt(1, 2) = 1;
  gt(2, 6) = 1;
  EXPECT_NEAR(bce_vad(half, gt), std::numbers::ln2, 1e-12);

  Eigen::MatrixXd exact = gt;
  double v = bce_vad(exact, gt);
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 2e-7);
}

TEST(Bce, MatchesScalarRecomputation) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  Eigen::MatrixXd p(2, 3), v(2, 3);
  for (int i = 0; i < 6; ++i) {
    p.data()[i] = u(rng);
    v.data()[i] = u(rng) > 0.5 ? 1.0 : 0.0;
  }
  EXPECT_NEAR(bce_vad(p, v), bce_oracle(p, v), 1e-12);
  EXPECT_THROW(bce_vad(p, Eigen::MatrixXd::Zero(3, 2)), std::invalid_argument);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Eigen::MatrixXd p(3, 4), v(3, 4);
  for (int i = 0; i < 12; ++i) {
    p.data()[i] = u(rng);
    v.data()[i] = u(rng);
  }
  auto g = bce_vad_grad(p, v);
  for (int i = 0; i < 12; ++i) {
    Eigen::MatrixXd a = p, b = p;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    EXPECT_NEAR(g.data()[i], (bce_vad(a, v) - bce_vad(b, v)) / 2e-6, 1e-7);
  }
}

TEST(LSep, UnitValues) {
  std::vector<Waveform> ref{Waveform::zeros(10), Waveform::zeros(10)};
  std::vector<Waveform> est = ref;
  for (auto& w : est) {
    for (std::size_t i = 0; i < w.size(); ++i) w.samples[i] = i % 2 ? 0.1 : -0.1;
  }
  EXPECT_EQ(l_sep(est, ref), -1.0);
  EXPECT_DOUBLE_EQ(l_sep(ref, ref), -8.0);
}

TEST(LSep, MatchesBruteForceDoubleSum) {
  std::mt19937_64 rng(3);
  auto est = random_waves(2, 16, rng), ref = random_waves(2, 16, rng);
  double s = 0;
  for (int k = 0; k < 2; ++k) {
    for (int n = 0; n < 16; ++n) s += std::abs(est[k].samples[n] - ref[k].samples[n]);
  }
  EXPECT_NEAR(l_sep(est, ref), std::log10(s / 32.0), 1e-12);
  est[1].samples.pop_back();
  EXPECT_THROW(l_sep(est, ref), std::invalid_argument);
}

TEST(LSep, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto est = random_waves(2, 8, rng), ref = random_waves(2, 8, rng);
  auto g = l_sep_grad(est, ref);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 8; ++i) {
      auto a = est, b = est;
      a[k].samples[i] += 1e-7;
      b[k].samples[i] -= 1e-7;
      EXPECT_NEAR(g[k][i], (l_sep(a, ref) - l_sep(b, ref)) / 2e-7, 1e-6);
    }
  }
}

TEST(OverlapWeight, CanonicalBins) {
  const double eps = 1e-8;
  RealGrid a(1, 3), b(1, 3);
  a << 1.0, 1.0, 0.0;
  b << 1.0, 0.0, 0.0;
  std::vector<RealGrid> mags{a, b};
  auto w = overlap_weight(mags, eps);
  EXPECT_DOUBLE_EQ(w(0, 0), 2.0 / (1.0 + eps));
  EXPECT_DOUBLE_EQ(w(0, 1), 1.0 / (1.0 + eps));
  EXPECT_EQ(w(0, 2), 0.0);
}

TEST(OverlapWeight, RangeProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t K = 1 + trial % 6;
    std::vector<RealGrid> mags;
    for (std::size_t k = 0; k < K; ++k) {
      RealGrid g(4, 5);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
      mags.push_back(g);
    }
    auto w = overlap_weight(mags, 1e-8);
    EXPECT_GE(w.minCoeff(), 0.0);
    EXPECT_LT(w.maxCoeff(), static_cast<double>(K) + 1.0);
  }
  // m equally loud speakers give weight close to m.
  std::vector<RealGrid> three(3, RealGrid::Constant(2, 2, 0.7));
  EXPECT_NEAR(overlap_weight(three, 1e-8)(1, 1), 3.0, 1e-6);
}

TEST(Osl, ZeroWhenEqualAndSingleBinHandCase) {
  std::mt19937_64 rng(6);
  auto ref = random_specs(2, 4, 5, rng);
  OslConfig cfg;
  EXPECT_EQ(osl(ref, ref, cfg), 0.0);

  // Single bin, two equally loud speakers (w = 2), magnitude error 0.5 each.
  std::vector<ComplexGrid> y{ComplexGrid::Constant(1, 1, {1.0, 0.0}),
                             ComplexGrid::Constant(1, 1, {1.0, 0.0})};
  std::vector<ComplexGrid> yh{ComplexGrid::Constant(1, 1, {1.5, 0.0}),
                              ComplexGrid::Constant(1, 1, {0.5, 0.0})};
  cfg.epsilon = 1e-300;  // weight exactly 2
  EXPECT_NEAR(osl(yh, y, cfg), 1.0, 1e-12);
}

TEST(Osl, MatchesBruteForceTripleSum) {
  std::mt19937_64 rng(7);
  auto est = random_specs(2, 4, 5, rng), ref = random_specs(2, 4, 5, rng);
  for (int p : {1, 2}) {
    OslConfig cfg;
    cfg.p = p;
    EXPECT_NEAR(osl(est, ref, cfg), osl_oracle(est, ref, p, cfg.epsilon), 1e-12);
  }
  EXPECT_THROW(osl(est, random_specs(2, 3, 5, rng), OslConfig{}),
               std::invalid_argument);
  OslConfig bad;
  bad.p = 3;
  EXPECT_THROW(osl(est, ref, bad), std::invalid_argument);
}

TEST(Osl, NonNegativeAndMonotoneInBinError) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  OslConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    auto ref = random_specs(3, 3, 4, rng);
    auto est = random_specs(3, 3, 4, rng);
    double base = osl(est, ref, cfg);
    EXPECT_GE(base, 0.0);
    // Push one bin further from its reference magnitude.
    int k = trial % 3, t = trial % 3, f = trial % 4;
    double re = std::abs(ref[k](t, f)), ae = std::abs(est[k](t, f));
    double grow = 1.0 + u(rng);
    double target = ae >= re ? ae * grow : ae / grow;
    est[k](t, f) *= target / ae;
    EXPECT_GE(osl(est, ref, cfg), base - 1e-12);
  }
}

void check_osl_grad(const OslConfig& cfg, unsigned seed) {
  std::mt19937_64 rng(seed);
  auto est = random_specs(2, 3, 4, rng), ref = random_specs(2, 3, 4, rng);
  auto g = osl_grad(est, ref, cfg);
  const double h = 1e-7;
  for (std::size_t k = 0; k < 2; ++k) {
    for (Eigen::Index i = 0; i < est[k].size(); ++i) {
      for (int part = 0; part < 2; ++part) {
        std::complex<double> d = part ? std::complex<double>(0, h)
                                      : std::complex<double>(h, 0);
        auto a = est, b = est;
        a[k].data()[i] += d;
        b[k].data()[i] -= d;
        double fd = (osl(a, ref, cfg) - osl(b, ref, cfg)) / (2 * h);
        double an = part ? g[k].data()[i].imag() : g[k].data()[i].real();
        EXPECT_NEAR(an, fd, 1e-6);
      }
    }
  }
}

TEST(Osl, GradientMatchesFiniteDifferencesForAllVariants) {
  for (int p : {1, 2}) {
    for (auto ws : {OslWeightSource::kGroundTruth, OslWeightSource::kPredicted}) {
      for (auto diff : {OslDifference::kMagnitude, OslDifference::kComplex}) {
        OslConfig cfg;
        cfg.p = p;
        cfg.weight_source = ws;
        cfg.difference = diff;
        check_osl_grad(cfg, 10 + p);
      }
    }
  }
}

TEST(CombinedLoss, AffineInLambda) {
  std::mt19937_64 rng(9);
  auto y = random_waves(2, 32, rng), yh = random_waves(2, 32, rng);
  auto Y = random_specs(2, 4, 5, rng), Yh = random_specs(2, 4, 5, rng);
  OslConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.08);
  cfg.lambda = 0.0;
  EXPECT_EQ(combined_sep_loss(yh, y, Yh, Y, cfg).total, l_sep(yh, y));
  cfg.lambda = 0.1;
  double hi = combined_sep_loss(yh, y, Yh, Y, cfg).total;
  cfg.lambda = 0.05;
  auto lo = combined_sep_loss(yh, y, Yh, Y, cfg);
  EXPECT_NEAR(hi - lo.total, 0.05 * lo.osl, 1e-12);
  cfg.lambda = 0.08;
  auto def = combined_sep_loss(yh, y, Yh, Y, cfg);
  EXPECT_DOUBLE_EQ(def.total, def.l_sep + 0.08 * def.osl);
}

}  // namespace
}  // namespace tsep
