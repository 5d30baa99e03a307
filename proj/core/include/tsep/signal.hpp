// Waveform and time-frequency primitives.
//
// Frames are centered: frame t is analysed around sample t * hop, with
// window_len / 2 samples of zero padding on both sides of the signal.

#ifndef TSEP_SIGNAL_HPP_
#define TSEP_SIGNAL_HPP_

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tsep {

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  Waveform() = default;
  explicit Waveform(std::vector<double> s, int sr = kDefaultSampleRate)
      : samples(std::move(s)), sample_rate(sr) {}
  static Waveform zeros(std::size_t n, int sr = kDefaultSampleRate) {
    return Waveform(std::vector<double>(n, 0.0), sr);
  }

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  // Throws std::invalid_argument on a non-positive rate or non-finite samples.
  void validate() const;

  // Samples [begin, end), clamped to the signal.
  Waveform slice(std::size_t begin, std::size_t end) const;
};

enum class WindowKind { kSqrtHann, kHann };

// Analysis/synthesis parameters. Construction rejects configurations whose
// squared window does not overlap-add to a constant at the given hop.
class StftConfig {
 public:
  StftConfig() : StftConfig(1024, 256) {}
  StftConfig(std::size_t window_len, std::size_t hop,
             WindowKind kind = WindowKind::kSqrtHann);

  std::size_t window_len() const { return window_len_; }
  std::size_t hop() const { return hop_; }
  WindowKind kind() const { return kind_; }
  std::size_t num_bins() const { return window_len_ / 2 + 1; }
  const std::vector<double>& window() const { return window_; }

  // Number of frames produced for a signal of num_samples samples.
  std::size_t num_frames(std::size_t num_samples) const;

  bool operator==(const StftConfig& o) const {
    return window_len_ == o.window_len_ && hop_ == o.hop_ && kind_ == o.kind_;
  }

 private:
  std::size_t window_len_;
  std::size_t hop_;
  WindowKind kind_;
  std::vector<double> window_;
};

using ComplexGrid = Eigen::MatrixXcd;  // T x F
using RealGrid = Eigen::MatrixXd;      // T x F

struct Spectrogram {
  ComplexGrid bins;  // rows are frames, columns are frequency bins
  StftConfig config;
  std::size_t num_samples = 0;  // length of the analysed signal
  int sample_rate = kDefaultSampleRate;

  Eigen::Index frames() const { return bins.rows(); }
  Eigen::Index freqs() const { return bins.cols(); }
  double frame_rate() const {
    return static_cast<double>(sample_rate) / config.hop();
  }
  RealGrid magnitude() const { return bins.cwiseAbs2().cwiseSqrt(); }
};

struct Mask {
  RealGrid values;  // T x F, every value in [0, 1]

  Mask() = default;
  explicit Mask(RealGrid v);
  static Mask constant(Eigen::Index frames, Eigen::Index freqs, double value);
};

Spectrogram stft(const Waveform& x, const StftConfig& cfg);

// Weighted overlap-add inverse. Each output sample is normalised by the
// accumulated squared synthesis window, so the round trip is exact over the
// whole signal, edges included.
Waveform istft(const Spectrogram& s);

// Vector-Jacobian product of istft. Given dL/dy for the output of istft
// applied to a spectrogram of the given shape, returns G with
// G(t, f) = dL/dRe S(t, f) + i dL/dIm S(t, f).
ComplexGrid istft_vjp(std::span<const double> grad_out, const StftConfig& cfg,
                      std::size_t frames, std::size_t num_samples);

// Hadamard product M(t, f) * X(t, f).
Spectrogram apply_mask(const Mask& m, const Spectrogram& x);

// RMS of samples[begin, end), zero for an empty range.
double rms(std::span<const double> samples);
double db_to_amplitude(double db);

}  // namespace tsep

#endif  // TSEP_SIGNAL_HPP_
