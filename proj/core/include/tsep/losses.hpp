// Training objectives: speaker-dependent VAD cross entropy, time-domain
// reconstruction loss, overlapping spectral loss and their combination.
//
// Every loss has a matching *_grad returning the derivative with respect to
// its first (estimated) argument. Complex gradients are packed as
// dL/dRe + i dL/dIm.

#ifndef TSEP_LOSSES_HPP_
#define TSEP_LOSSES_HPP_

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tsep/signal.hpp"

namespace tsep {

enum class OslWeightSource { kGroundTruth, kPredicted };
enum class OslDifference { kMagnitude, kComplex };

struct OslConfig {
  int p = 1;
  double epsilon = 1e-8;
  double lambda = 0.08;
  OslWeightSource weight_source = OslWeightSource::kGroundTruth;
  OslDifference difference = OslDifference::kMagnitude;

  void validate() const;
};

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kLsepFloor = 1e-8;

// Mean binary cross entropy over a K x T grid. Predictions are clamped to
// [1e-7, 1 - 1e-7].
double bce_vad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
Eigen::MatrixXd bce_vad_grad(const Eigen::MatrixXd& pred,
                             const Eigen::MatrixXd& target);

// log10 of the mean absolute sample error over K signals of N samples,
// floored at `floor` before the logarithm.
double l_sep(std::span<const Waveform> est, std::span<const Waveform> ref,
             double floor = kLsepFloor);
std::vector<std::vector<double>> l_sep_grad(std::span<const Waveform> est,
                                            std::span<const Waveform> ref,
                                            double floor = kLsepFloor);

// Speaker-independent weight sum_k |Y_k| / (max_k |Y_k| + eps) per bin.
RealGrid overlap_weight(std::span<const RealGrid> mags, double epsilon);

// (1/K) sum_k sum_{t,f} w(t,f) |d_k(t,f)|^p. By default d is the magnitude
// difference and w comes from the reference magnitudes.
double osl(std::span<const ComplexGrid> est, std::span<const ComplexGrid> ref,
           const OslConfig& cfg);
std::vector<ComplexGrid> osl_grad(std::span<const ComplexGrid> est,
                                  std::span<const ComplexGrid> ref,
                                  const OslConfig& cfg);

struct SepLossValue {
  double l_sep = 0.0;
  double osl = 0.0;
  double total = 0.0;
};

// l_sep + lambda * osl.
SepLossValue combined_sep_loss(std::span<const Waveform> y_hat,
                               std::span<const Waveform> y,
                               std::span<const ComplexGrid> Y_hat,
                               std::span<const ComplexGrid> Y,
                               const OslConfig& cfg);

}  // namespace tsep

#endif  // TSEP_LOSSES_HPP_
