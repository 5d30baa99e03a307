// Enrollment-free speaker identification: fixed-length windows, overlap-aware
// window filtering, spectral clustering and cluster centroids.

#ifndef TSEP_CLUSTER_HPP_
#define TSEP_CLUSTER_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsep/embed.hpp"
#include "tsep/mixture.hpp"

namespace tsep {

struct TimeWindow {
  double start_s = 0.0;
  double end_s = 0.0;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const TimeWindow&) const = default;
};

// Contiguous windows of win_s seconds starting at offset_s and covering
// duration_s seconds. A trailing partial window is kept when it lasts at
// least min_keep_s.
std::vector<TimeWindow> extract_windows(double duration_s, double win_s = 2.0,
                                        double min_keep_s = 1.0,
                                        double offset_s = 0.0);
std::vector<TimeWindow> extract_windows(const Waveform& x, double win_s = 2.0);

enum class FrameClass { kNonSpeech, kSingle, kMulti };

class OverlapDetector {
 public:
  virtual ~OverlapDetector() = default;
  virtual FrameClass classify(double start_s, double end_s) const = 0;
  virtual double frame_s() const { return 0.01; }
};

// Active-speaker count from the mixture placements at the frame centre.
class OracleOverlapDetector final : public OverlapDetector {
 public:
  explicit OracleOverlapDetector(const Mixture& m);
  FrameClass classify(double start_s, double end_s) const override;

 private:
  std::vector<std::pair<std::int64_t, std::int64_t>> spans_;
  int sample_rate_;
};

class ConstantOverlapDetector final : public OverlapDetector {
 public:
  explicit ConstantOverlapDetector(FrameClass c) : c_(c) {}
  FrameClass classify(double, double) const override { return c_; }

 private:
  FrameClass c_;
};

// Fraction of detector frames in w classified single.
double single_fraction(const TimeWindow& w, const OverlapDetector& det);

// Keeps the windows in which single-speaker frames are a strict majority.
std::vector<TimeWindow> overlap_filter(std::span<const TimeWindow> windows,
                                       const OverlapDetector& det);

struct AffinityMatrix {
  Eigen::MatrixXd values;

  // Cosine similarity, negatives clipped to zero, unit diagonal.
  static AffinityMatrix cosine(std::span<const SpeakerEmbedding> es);
  void validate() const;
};

struct ClusterAssignment {
  std::vector<int> labels;  // in [0, k_est), numbered by first appearance
  int k_est = 0;
  std::vector<double> eigenvalues;  // normalised Laplacian, ascending
  bool underpopulated = false;      // fewer than k_est non-empty clusters

  int cluster_size(int c) const;
};

struct SpectralClusterConfig {
  int k_max = 8;
  int restarts = 50;
  int max_iters = 100;
  std::uint64_t seed = 0;
};

// Ng-Jordan-Weiss clustering. Without k the count is taken at the largest
// gap among the smallest Laplacian eigenvalues.
ClusterAssignment spectral_cluster(const AffinityMatrix& a,
                                   std::optional<int> k = std::nullopt,
                                   const SpectralClusterConfig& cfg = {});
ClusterAssignment spectral_cluster(std::span<const SpeakerEmbedding> es,
                                   std::optional<int> k = std::nullopt,
                                   const SpectralClusterConfig& cfg = {});

SpeakerEmbedding centroid(std::span<const SpeakerEmbedding> members);
// Centroid of every cluster, index c.
std::vector<SpeakerEmbedding> cluster_centroids(
    std::span<const SpeakerEmbedding> es, const ClusterAssignment& a);

// Fraction of items whose cluster's majority truth label equals their own.
double cluster_purity(std::span<const int> labels, std::span<const int> truth);

// Majority speaker of a window from the placements (-1 if nobody speaks).
int dominant_speaker(const Mixture& m, const TimeWindow& w);

nlohmann::json cluster_report(std::span<const TimeWindow> windows,
                              const ClusterAssignment& a,
                              std::span<const int> truth = {});

}  // namespace tsep

#endif  // TSEP_CLUSTER_HPP_
