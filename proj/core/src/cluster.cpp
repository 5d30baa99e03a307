#include "tsep/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "tsep/log.hpp"
#include "tsep/random.hpp"

namespace tsep {

namespace {

constexpr double kTimeEps = 1e-9;

int frames_in(const TimeWindow& w, double frame_s) {
  return std::max(1, static_cast<int>(std::lround(w.duration_s() / frame_s)));
}

struct KMeansResult {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

int nearest(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& centers,
            double* dist) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    double d = (x - centers.row(c)).squaredNorm();
    if (d < bd) {  // strict: the lowest index wins ties
      bd = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = bd;
  return best;
}

KMeansResult kmeans_once(const Eigen::MatrixXd& x, int k, int max_iters,
                         std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) {
        best = std::min(best, (x.row(i) - centers.row(j)).squaredNorm());
      }
      d2[i] = best;
      total += best;
    }
    Eigen::Index chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (r < acc) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(c) = x.row(chosen);
  }

  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int l = nearest(x.row(i), centers, nullptr);
      if (l != res.labels[i]) {
        res.labels[i] = l;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[i]) += x.row(i);
      ++counts[res.labels[i]];
    }
    // An emptied cluster keeps its previous centre.
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
  }
  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    res.inertia += (x.row(i) - centers.row(res.labels[i])).squaredNorm();
  }
  return res;
}

std::vector<int> relabel_by_first_appearance(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::vector<TimeWindow> extract_windows(double duration_s, double win_s,
                                        double min_keep_s, double offset_s) {
  if (!(win_s > 0.0)) throw std::invalid_argument("window length must be positive");
  std::vector<TimeWindow> out;
  if (!(duration_s > 0.0)) return out;
  const auto full = static_cast<long>(std::floor(duration_s / win_s + kTimeEps));
  for (long i = 0; i < full; ++i) {
    out.push_back({offset_s + i * win_s, offset_s + (i + 1) * win_s});
  }
  const double rest = duration_s - full * win_s;
  if (rest > kTimeEps && rest + kTimeEps >= min_keep_s) {
    out.push_back({offset_s + full * win_s, offset_s + duration_s});
  }
  return out;
}

std::vector<TimeWindow> extract_windows(const Waveform& x, double win_s) {
  if (x.empty()) throw std::invalid_argument("extract_windows: empty waveform");
  return extract_windows(x.duration_s(), win_s);
}

OracleOverlapDetector::OracleOverlapDetector(const Mixture& m)
    : sample_rate_(m.sample_rate()) {
  for (const auto& p : m.placements) spans_.emplace_back(p.begin, p.end);
}

FrameClass OracleOverlapDetector::classify(double start_s, double end_s) const {
  const auto centre = static_cast<std::int64_t>(
      std::floor(0.5 * (start_s + end_s) * sample_rate_));
  int active = 0;
  for (const auto& [b, e] : spans_) active += (centre >= b && centre < e);
  if (active == 0) return FrameClass::kNonSpeech;
  return active == 1 ? FrameClass::kSingle : FrameClass::kMulti;
}

double single_fraction(const TimeWindow& w, const OverlapDetector& det) {
  const double fs = det.frame_s();
  const int n = frames_in(w, fs);
  int single = 0;
  for (int i = 0; i < n; ++i) {
    double a = w.start_s + i * fs;
    double b = std::min(w.end_s, a + fs);
    single += det.classify(a, b) == FrameClass::kSingle;
  }
  return static_cast<double>(single) / n;
}

std::vector<TimeWindow> overlap_filter(std::span<const TimeWindow> windows,
                                       const OverlapDetector& det) {
  std::vector<TimeWindow> out;
  for (const auto& w : windows) {
    if (single_fraction(w, det) > 0.5) out.push_back(w);
  }
  return out;
}

AffinityMatrix AffinityMatrix::cosine(std::span<const SpeakerEmbedding> es) {
  const auto n = static_cast<Eigen::Index>(es.size());
  AffinityMatrix a{Eigen::MatrixXd::Identity(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double c = std::clamp(es[i].cosine(es[j]), 0.0, 1.0);
      a.values(i, j) = a.values(j, i) = c;
    }
  }
  return a;
}

void AffinityMatrix::validate() const {
  if (values.rows() != values.cols()) {
    throw std::invalid_argument("affinity matrix is not square");
  }
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (std::abs(values(i, i) - 1.0) > 1e-9) {
      throw std::invalid_argument("affinity diagonal must be 1");
    }
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      double v = values(i, j);
      if (!(v >= -1.0 && v <= 1.0)) {
        throw std::invalid_argument("affinity entries must lie in [-1, 1]");
      }
      if (std::abs(v - values(j, i)) > 1e-9) {
        throw std::invalid_argument("affinity matrix is not symmetric");
      }
    }
  }
}

int ClusterAssignment::cluster_size(int c) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), c));
}

ClusterAssignment spectral_cluster(const AffinityMatrix& aff, std::optional<int> k,
                                   const SpectralClusterConfig& cfg) {
  const Eigen::MatrixXd& a = aff.values;
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("affinity matrix is not square");
  if (n < 2) throw std::invalid_argument("spectral_cluster needs at least 2 items");
  if (k && *k < 1) throw std::invalid_argument("cluster count must be positive");
  if (!a.allFinite() || a.minCoeff() < 0.0) {
    throw std::invalid_argument("affinity must be finite and non-negative");
  }

  ClusterAssignment out;
  const double top = a.maxCoeff();
  if (top <= 0.0) throw std::invalid_argument("affinity is identically zero");
  if (a.minCoeff() >= top * (1.0 - 1e-12)) {
    out.k_est = 1;
    out.labels.assign(static_cast<std::size_t>(n), 0);
    out.eigenvalues.assign(static_cast<std::size_t>(n), 1.0);
    out.eigenvalues[0] = 0.0;
    if (k && *k != 1) {
      out.k_est = *k;
      out.underpopulated = true;
      log::warn("cluster_underpopulated", {{"requested", *k}, {"non_empty", 1}});
    }
    return out;
  }

  Eigen::VectorXd dinv = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n) -
                      dinv.asDiagonal() * a * dinv.asDiagonal();
  l = 0.5 * (l + l.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l);
  const Eigen::VectorXd& lam = eig.eigenvalues();
  out.eigenvalues.assign(lam.data(), lam.data() + n);

  int kk = 0;
  if (k) {
    kk = static_cast<int>(std::min<Eigen::Index>(*k, n));
  } else {
    const int kmax = static_cast<int>(std::min<Eigen::Index>(cfg.k_max, n - 1));
    double best_gap = -1.0;
    for (int c = 1; c <= kmax; ++c) {
      double gap = lam(c) - lam(c - 1);
      if (gap > best_gap) {
        best_gap = gap;
        kk = c;
      }
    }
  }
  out.k_est = k ? *k : kk;

  if (kk == 1) {
    out.labels.assign(static_cast<std::size_t>(n), 0);
  } else {
    Eigen::MatrixXd u = eig.eigenvectors().leftCols(kk);
    for (Eigen::Index i = 0; i < n; ++i) {
      double norm = u.row(i).norm();
      if (norm > 0.0) u.row(i) /= norm;
    }
    KMeansResult best;
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
      std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)}));
      KMeansResult res = kmeans_once(u, kk, cfg.max_iters, rng);
      if (res.inertia < best.inertia - 1e-12) best = std::move(res);
    }
    out.labels = relabel_by_first_appearance(best.labels);
  }

  const int non_empty =
      out.labels.empty() ? 0 : *std::max_element(out.labels.begin(), out.labels.end()) + 1;
  if (non_empty < out.k_est) {
    out.underpopulated = true;
    log::warn("cluster_underpopulated",
              {{"requested", out.k_est}, {"non_empty", non_empty}});
  }
  return out;
}

ClusterAssignment spectral_cluster(std::span<const SpeakerEmbedding> es,
                                   std::optional<int> k,
                                   const SpectralClusterConfig& cfg) {
  return spectral_cluster(AffinityMatrix::cosine(es), k, cfg);
}

SpeakerEmbedding centroid(std::span<const SpeakerEmbedding> members) {
  if (members.empty()) throw std::invalid_argument("centroid of an empty cluster");
  return mean_embed(members);
}

std::vector<SpeakerEmbedding> cluster_centroids(std::span<const SpeakerEmbedding> es,
                                                const ClusterAssignment& a) {
  if (es.size() != a.labels.size()) {
    throw std::invalid_argument("cluster_centroids: label count mismatch");
  }
  std::vector<SpeakerEmbedding> out;
  for (int c = 0; c < a.k_est; ++c) {
    std::vector<SpeakerEmbedding> members;
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (a.labels[i] == c) members.push_back(es[i]);
    }
    if (members.empty()) continue;
    out.push_back(centroid(members));
  }
  return out;
}

double cluster_purity(std::span<const int> labels, std::span<const int> truth) {
  if (labels.size() != truth.size()) {
    throw std::invalid_argument("cluster_purity: size mismatch");
  }
  if (labels.empty()) return 1.0;
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][truth[i]];
  int hits = 0;
  for (const auto& [c, by_truth] : counts) {
    int best = 0;
    for (const auto& [t, cnt] : by_truth) best = std::max(best, cnt);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

int dominant_speaker(const Mixture& m, const TimeWindow& w) {
  const auto sr = m.sample_rate();
  const auto b = static_cast<std::int64_t>(std::llround(w.start_s * sr));
  const auto e = static_cast<std::int64_t>(std::llround(w.end_s * sr));
  std::vector<std::int64_t> dur(m.num_speakers(), 0);
  for (const auto& p : m.placements) {
    dur[p.speaker] += std::max<std::int64_t>(0, std::min(e, p.end) - std::max(b, p.begin));
  }
  auto it = std::max_element(dur.begin(), dur.end());
  if (it == dur.end() || *it == 0) return -1;
  return static_cast<int>(it - dur.begin());
}

nlohmann::json cluster_report(std::span<const TimeWindow> windows,
                              const ClusterAssignment& a, std::span<const int> truth) {
  if (windows.size() != a.labels.size()) {
    throw std::invalid_argument("cluster_report: window and label counts differ");
  }
  nlohmann::json j;
  j["k_est"] = a.k_est;
  j["underpopulated"] = a.underpopulated;
  j["eigenvalues"] = a.eigenvalues;
  auto& ws = j["windows"] = nlohmann::json::array();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    nlohmann::json w{{"start_s", windows[i].start_s},
                     {"end_s", windows[i].end_s},
                     {"label", a.labels[i]}};
    if (!truth.empty()) w["truth"] = truth[i];
    ws.push_back(std::move(w));
  }
  if (!truth.empty()) {
    if (truth.size() != a.labels.size()) {
      throw std::invalid_argument("cluster_report: truth count mismatch");
    }
    j["purity"] = cluster_purity(a.labels, truth);
    auto& per = j["clusters"] = nlohmann::json::array();
    for (int c = 0; c < a.k_est; ++c) {
      std::map<int, int> by_truth;
      int size = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        if (a.labels[i] == c) {
          ++by_truth[truth[i]];
          ++size;
        }
      }
      int best = 0, majority = -1;
      for (const auto& [t, cnt] : by_truth) {
        if (cnt > best) {
          best = cnt;
          majority = t;
        }
      }
      per.push_back({{"label", c},
                     {"size", size},
                     {"majority", majority},
                     {"purity", size ? static_cast<double>(best) / size : 0.0}});
    }
  }
  return j;
}

}  // namespace tsep
