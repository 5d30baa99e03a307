#include "tsep/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/FFT>

namespace tsep {

namespace {

std::vector<double> make_window(std::size_t n, WindowKind kind) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    // periodic Hann
    double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    w[i] = kind == WindowKind::kSqrtHann ? std::sqrt(hann) : hann;
  }
  return w;
}

// Real inverse FFT of a half spectrum; imaginary parts of the DC and Nyquist
// bins carry no information for a real signal and are dropped.
void irfft(Eigen::FFT<double>& fft, std::vector<std::complex<double>>& half,
           std::vector<double>& out, std::size_t n) {
  half.front() = {half.front().real(), 0.0};
  half.back() = {half.back().real(), 0.0};
  fft.inv(out, half, static_cast<Eigen::Index>(n));
}

constexpr double kWindowSumFloor = 1e-10;

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) {
    throw std::invalid_argument("waveform sample rate must be positive");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw std::invalid_argument("waveform sample " + std::to_string(i) +
                                  " is not finite");
    }
  }
}

Waveform Waveform::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, samples.size());
  begin = std::min(begin, end);
  return Waveform(std::vector<double>(samples.begin() + begin,
                                      samples.begin() + end),
                  sample_rate);
}

StftConfig::StftConfig(std::size_t window_len, std::size_t hop,
                       WindowKind kind)
    : window_len_(window_len), hop_(hop), kind_(kind) {
  if (window_len_ < 2 || window_len_ % 2 != 0) {
    throw std::invalid_argument("window_len must be even and >= 2");
  }
  if (hop_ == 0 || hop_ > window_len_) {
    throw std::invalid_argument("hop must satisfy 0 < hop <= window_len");
  }
  window_ = make_window(window_len_, kind_);

  // Analysis and synthesis use the same window, so the overlap-add
  // condition is on w^2.
  std::vector<double> acc(hop_, 0.0);
  for (std::size_t i = 0; i < window_len_; ++i) {
    acc[i % hop_] += window_[i] * window_[i];
  }
  auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  if (*hi <= 0.0 || (*hi - *lo) > 1e-9 * *hi) {
    throw std::invalid_argument(
        "window does not satisfy constant overlap-add at window_len=" +
        std::to_string(window_len_) + " hop=" + std::to_string(hop_));
  }
}

std::size_t StftConfig::num_frames(std::size_t num_samples) const {
  return 1 + (num_samples + hop_ - 1) / hop_;
}

Mask::Mask(RealGrid v) : values(std::move(v)) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    double x = values.data()[i];
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::invalid_argument("mask values must lie in [0, 1]");
    }
  }
}

Mask Mask::constant(Eigen::Index frames, Eigen::Index freqs, double value) {
  return Mask(RealGrid::Constant(frames, freqs, value));
}

Spectrogram stft(const Waveform& x, const StftConfig& cfg) {
  x.validate();
  const std::size_t n = cfg.window_len();
  const std::size_t hop = cfg.hop();
  const std::size_t frames = cfg.num_frames(x.size());
  const std::size_t padded_len = (frames - 1) * hop + n;
  const std::size_t offset = n / 2;

  std::vector<double> padded(padded_len, 0.0);
  std::copy(x.samples.begin(), x.samples.end(), padded.begin() + offset);

  Spectrogram s{ComplexGrid(frames, cfg.num_bins()), cfg, x.size(),
                x.sample_rate};
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  const auto& w = cfg.window();
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = padded[t * hop + i] * w[i];
    fft.fwd(spec, frame);
    for (std::size_t f = 0; f < cfg.num_bins(); ++f) s.bins(t, f) = spec[f];
  }
  return s;
}

Waveform istft(const Spectrogram& s) {
  const auto& cfg = s.config;
  const std::size_t n = cfg.window_len();
  const std::size_t hop = cfg.hop();
  const std::size_t frames = static_cast<std::size_t>(s.frames());
  if (s.freqs() != static_cast<Eigen::Index>(cfg.num_bins())) {
    throw std::invalid_argument("spectrogram bin count does not match config");
  }
  if (!s.bins.allFinite()) {
    throw std::invalid_argument("spectrogram contains non-finite values");
  }
  Waveform out = Waveform::zeros(s.num_samples, s.sample_rate);
  if (frames == 0) return out;

  const std::size_t padded_len = (frames - 1) * hop + n;
  std::vector<double> acc(padded_len, 0.0);
  std::vector<double> wsum(padded_len, 0.0);
  const auto& w = cfg.window();

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(cfg.num_bins());
  std::vector<double> frame;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < cfg.num_bins(); ++f) half[f] = s.bins(t, f);
    irfft(fft, half, frame, n);
    for (std::size_t i = 0; i < n; ++i) {
      acc[t * hop + i] += w[i] * frame[i];
      wsum[t * hop + i] += w[i] * w[i];
    }
  }
  const std::size_t offset = n / 2;
  for (std::size_t i = 0; i < s.num_samples && i + offset < padded_len; ++i) {
    double ws = wsum[i + offset];
    out.samples[i] = ws > kWindowSumFloor ? acc[i + offset] / ws : 0.0;
  }
  return out;
}

ComplexGrid istft_vjp(std::span<const double> grad_out, const StftConfig& cfg,
                      std::size_t frames, std::size_t num_samples) {
  if (grad_out.size() != num_samples) {
    throw std::invalid_argument("istft_vjp: gradient length mismatch");
  }
  const std::size_t n = cfg.window_len();
  const std::size_t hop = cfg.hop();
  const std::size_t bins = cfg.num_bins();
  ComplexGrid g = ComplexGrid::Zero(frames, bins);
  if (frames == 0) return g;

  const std::size_t padded_len = (frames - 1) * hop + n;
  const std::size_t offset = n / 2;
  const auto& w = cfg.window();
  std::vector<double> wsum(padded_len, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) wsum[t * hop + i] += w[i] * w[i];
  }
  // dL/d(acc[p]) for the padded overlap-add buffer.
  std::vector<double> gacc(padded_len, 0.0);
  for (std::size_t i = 0; i < num_samples && i + offset < padded_len; ++i) {
    double ws = wsum[i + offset];
    if (ws > kWindowSumFloor) gacc[i + offset] = grad_out[i] / ws;
  }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = w[i] * gacc[t * hop + i];
    fft.fwd(spec, frame);
    for (std::size_t f = 0; f < bins; ++f) {
      // Interior bins appear twice in the Hermitian-extended spectrum.
      double c = (f == 0 || f == bins - 1) ? inv_n : 2.0 * inv_n;
      g(t, f) = c * spec[f];
    }
  }
  return g;
}

Spectrogram apply_mask(const Mask& m, const Spectrogram& x) {
  if (m.values.rows() != x.bins.rows() || m.values.cols() != x.bins.cols()) {
    throw std::invalid_argument(
        "apply_mask: mask shape " + std::to_string(m.values.rows()) + "x" +
        std::to_string(m.values.cols()) + " does not match spectrogram " +
        std::to_string(x.bins.rows()) + "x" + std::to_string(x.bins.cols()));
  }
  Spectrogram out = x;
  out.bins = x.bins.array() * m.values.array().cast<std::complex<double>>();
  return out;
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double v : samples) acc += v * v;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace tsep
