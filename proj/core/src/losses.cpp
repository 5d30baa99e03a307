#include "tsep/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tsep {

namespace {

void check_same_shape(std::span<const ComplexGrid> a,
                      std::span<const ComplexGrid> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument(std::string(what) + ": speaker count mismatch");
  }
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].rows() != b[k].rows() || a[k].cols() != b[k].cols() ||
        a[k].rows() != a[0].rows() || a[k].cols() != a[0].cols()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
  }
}

// Plain sqrt(re^2 + im^2); std::abs goes through hypot, which is far slower
// and buys nothing at these magnitudes.
inline double cabs(std::complex<double> z) {
  return std::sqrt(z.real() * z.real() + z.imag() * z.imag());
}

std::vector<RealGrid> magnitudes(std::span<const ComplexGrid> xs) {
  std::vector<RealGrid> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.cwiseAbs2().cwiseSqrt());
  return out;
}

double sign(double v) { return (v > 0) - (v < 0); }

}  // namespace

void OslConfig::validate() const {
  if (p != 1 && p != 2) throw std::invalid_argument("osl: p must be 1 or 2");
  if (!(epsilon > 0)) throw std::invalid_argument("osl: epsilon must be > 0");
  if (!(lambda >= 0)) throw std::invalid_argument("osl: lambda must be >= 0");
}

double bce_vad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("bce_vad: shape mismatch");
  }
  if (pred.size() == 0) throw std::invalid_argument("bce_vad: empty input");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    double p = std::clamp(pred.data()[i], kBceClamp, 1.0 - kBceClamp);
    double v = target.data()[i];
    acc -= v * std::log(p) + (1.0 - v) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(pred.size());
}

Eigen::MatrixXd bce_vad_grad(const Eigen::MatrixXd& pred,
                             const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("bce_vad_grad: shape mismatch");
  }
  Eigen::MatrixXd g(pred.rows(), pred.cols());
  const double scale = 1.0 / static_cast<double>(pred.size());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    double p = pred.data()[i];
    double v = target.data()[i];
    if (p < kBceClamp || p > 1.0 - kBceClamp) {
      g.data()[i] = 0.0;
    } else {
      g.data()[i] = scale * (p - v) / (p * (1.0 - p));
    }
  }
  return g;
}

namespace {

double mean_abs_error(std::span<const Waveform> est,
                      std::span<const Waveform> ref) {
  if (est.size() != ref.size() || est.empty()) {
    throw std::invalid_argument("l_sep: speaker count mismatch");
  }
  const std::size_t n = ref[0].size();
  if (n == 0) throw std::invalid_argument("l_sep: empty signals");
  // Compensated extended-precision sum so a constant error e gives back e.
  long double acc = 0.0L, comp = 0.0L;
  for (std::size_t k = 0; k < est.size(); ++k) {
    if (est[k].size() != n || ref[k].size() != n) {
      throw std::invalid_argument("l_sep: length mismatch for speaker " +
                                  std::to_string(k));
    }
    for (std::size_t i = 0; i < n; ++i) {
      long double v = std::abs(est[k].samples[i] - ref[k].samples[i]);
      long double t = acc + v;
      comp += std::abs(acc) >= v ? (acc - t) + v : (v - t) + acc;
      acc = t;
    }
  }
  return static_cast<double>((acc + comp) / (static_cast<long double>(est.size()) *
                                             static_cast<long double>(n)));
}

}  // namespace

double l_sep(std::span<const Waveform> est, std::span<const Waveform> ref,
             double floor) {
  return std::log10(std::max(floor, mean_abs_error(est, ref)));
}

std::vector<std::vector<double>> l_sep_grad(std::span<const Waveform> est,
                                            std::span<const Waveform> ref,
                                            double floor) {
  const double mean = mean_abs_error(est, ref);
  std::vector<std::vector<double>> g(est.size());
  const std::size_t n = ref[0].size();
  for (auto& gk : g) gk.assign(n, 0.0);
  if (mean < floor) return g;
  const double scale = 1.0 / (std::numbers::ln10 * mean *
                              static_cast<double>(est.size() * n));
  for (std::size_t k = 0; k < est.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      g[k][i] = scale * sign(est[k].samples[i] - ref[k].samples[i]);
    }
  }
  return g;
}

RealGrid overlap_weight(std::span<const RealGrid> mags, double epsilon) {
  if (mags.empty()) throw std::invalid_argument("overlap_weight: no speakers");
  RealGrid sum = RealGrid::Zero(mags[0].rows(), mags[0].cols());
  RealGrid peak = RealGrid::Zero(mags[0].rows(), mags[0].cols());
  for (const auto& m : mags) {
    if (m.rows() != sum.rows() || m.cols() != sum.cols()) {
      throw std::invalid_argument("overlap_weight: shape mismatch");
    }
    if ((m.array() < 0).any()) {
      throw std::invalid_argument("overlap_weight: negative magnitude");
    }
    sum += m;
    peak = peak.cwiseMax(m);
  }
  return (sum.array() / (peak.array() + epsilon)).matrix();
}

namespace {

// Per-speaker difference grids d_k and the weight grid used by osl.
struct OslTerms {
  std::vector<RealGrid> diff_abs;  // |d_k|
  RealGrid weight;
};

OslTerms osl_terms(std::span<const ComplexGrid> est,
                   std::span<const ComplexGrid> ref, const OslConfig& cfg) {
  OslTerms terms;
  auto est_mag = magnitudes(est);
  auto ref_mag = magnitudes(ref);
  for (std::size_t k = 0; k < est.size(); ++k) {
    if (cfg.difference == OslDifference::kMagnitude) {
      terms.diff_abs.push_back((est_mag[k] - ref_mag[k]).cwiseAbs());
    } else {
      terms.diff_abs.push_back((est[k] - ref[k]).cwiseAbs2().cwiseSqrt());
    }
  }
  terms.weight = overlap_weight(
      cfg.weight_source == OslWeightSource::kGroundTruth ? ref_mag : est_mag,
      cfg.epsilon);
  return terms;
}

}  // namespace

double osl(std::span<const ComplexGrid> est, std::span<const ComplexGrid> ref,
           const OslConfig& cfg) {
  cfg.validate();
  check_same_shape(est, ref, "osl");
  auto terms = osl_terms(est, ref, cfg);
  double acc = 0.0;
  for (const auto& d : terms.diff_abs) {
    if (cfg.p == 1) {
      acc += (terms.weight.array() * d.array()).sum();
    } else {
      acc += (terms.weight.array() * d.array().square()).sum();
    }
  }
  return acc / static_cast<double>(est.size());
}

std::vector<ComplexGrid> osl_grad(std::span<const ComplexGrid> est,
                                  std::span<const ComplexGrid> ref,
                                  const OslConfig& cfg) {
  cfg.validate();
  check_same_shape(est, ref, "osl_grad");
  const std::size_t K = est.size();
  const Eigen::Index T = est[0].rows(), F = est[0].cols();
  const double inv_k = 1.0 / static_cast<double>(K);
  auto terms = osl_terms(est, ref, cfg);

  std::vector<ComplexGrid> grads(K, ComplexGrid::Zero(T, F));
  for (std::size_t k = 0; k < K; ++k) {
    for (Eigen::Index f = 0; f < F; ++f) {
      for (Eigen::Index t = 0; t < T; ++t) {
        const std::complex<double> e = est[k](t, f);
        const std::complex<double> r = ref[k](t, f);
        const double w = terms.weight(t, f) * inv_k;
        if (cfg.difference == OslDifference::kMagnitude) {
          const double ae = cabs(e);
          if (ae == 0.0) continue;  // subgradient 0 at the origin
          const double d = ae - cabs(r);
          const double dd = cfg.p == 1 ? sign(d) : 2.0 * d;
          grads[k](t, f) += w * dd * (e / ae);
        } else {
          const std::complex<double> d = e - r;
          const double ad = cabs(d);
          if (cfg.p == 1) {
            if (ad > 0.0) grads[k](t, f) += w * (d / ad);
          } else {
            grads[k](t, f) += w * 2.0 * d;
          }
        }
      }
    }
  }

  if (cfg.weight_source == OslWeightSource::kPredicted) {
    // w = S / (m + eps), S = sum_j a_j, m = max_j a_j, a_j = |est_j|.
    for (Eigen::Index f = 0; f < F; ++f) {
      for (Eigen::Index t = 0; t < T; ++t) {
        double s = 0.0, m = 0.0;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < K; ++j) {
          double a = cabs(est[j](t, f));
          s += a;
          if (a > m) {
            m = a;
            arg = j;
          }
        }
        double penalty = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          double d = terms.diff_abs[k](t, f);
          penalty += cfg.p == 1 ? d : d * d;
        }
        penalty *= inv_k;
        const double denom = m + cfg.epsilon;
        for (std::size_t j = 0; j < K; ++j) {
          const double a = cabs(est[j](t, f));
          if (a == 0.0) continue;
          double dw = 1.0 / denom;
          if (j == arg) dw -= s / (denom * denom);
          grads[j](t, f) += penalty * dw * (est[j](t, f) / a);
        }
      }
    }
  }
  return grads;
}

SepLossValue combined_sep_loss(std::span<const Waveform> y_hat,
                               std::span<const Waveform> y,
                               std::span<const ComplexGrid> Y_hat,
                               std::span<const ComplexGrid> Y,
                               const OslConfig& cfg) {
  SepLossValue v;
  v.l_sep = l_sep(y_hat, y);
  v.osl = osl(Y_hat, Y, cfg);
  v.total = v.l_sep + cfg.lambda * v.osl;
  return v;
}

}  // namespace tsep
