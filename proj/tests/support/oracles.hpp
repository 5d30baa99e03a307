// Independent brute-force oracles shared by the unit and acceptance tests.

#ifndef TSEP_TESTS_ORACLES_HPP_
#define TSEP_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tsep/cluster.hpp"
#include "tsep/embed.hpp"
#include "tsep/infer.hpp"
#include "tsep/metrics.hpp"
#include "tsep/rttm.hpp"

namespace tsep::testing {

// Brute-force scorer on 10 ms frames: a frame is scored unless its centre is
// within the collar of a reference boundary; the speaker map is the best of
// every injective mapping.
inline double frame_der(const DiarAnnotation& ref, const DiarAnnotation& hyp, double collar) {
  const double step = 0.01;
  double end = 0.0;
  for (const auto& t : ref.turns) end = std::max(end, t.end_s);
  for (const auto& t : hyp.turns) end = std::max(end, t.end_s);
  const int n = static_cast<int>(std::ceil(end / step - 1e-9));
  auto rs = ref.speakers(), hs = hyp.speakers();
  auto active = [](const DiarAnnotation& a, const std::string& s, double c) {
    for (const auto& t : a.turns)
      if (t.speaker == s && c >= t.start_s && c < t.end_s) return true;
    return false;
  };
  std::vector<std::vector<char>> R(rs.size(), std::vector<char>(n)), H(hs.size(), std::vector<char>(n));
  std::vector<char> scored(n, 1);
  for (int i = 0; i < n; ++i) {
    const double c = (i + 0.5) * step;
    for (const auto& t : ref.turns)
      if (std::abs(c - t.start_s) < collar || std::abs(c - t.end_s) < collar) scored[i] = 0;
    for (std::size_t r = 0; r < rs.size(); ++r) R[r][i] = active(ref, rs[r], c);
    for (std::size_t h = 0; h < hs.size(); ++h) H[h][i] = active(hyp, hs[h], c);
  }
  // Pad the hypothesis list so every reference speaker can also stay unmapped.
  std::vector<int> perm(std::max(rs.size(), hs.size()) + rs.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0, total = 0.0, base = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!scored[i]) continue;
    int nr = 0, nh = 0;
    for (auto& r : R) nr += r[i];
    for (auto& h : H) nh += h[i];
    total += nr;
    base += std::max(nr, nh);
  }
  do {
    double correct = 0.0;
    for (std::size_t r = 0; r < rs.size(); ++r) {
      int h = perm[r];
      if (h >= static_cast<int>(hs.size())) continue;
      for (int i = 0; i < n; ++i) correct += scored[i] && R[r][i] && H[h][i];
    }
    best = std::max(best, correct);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return (base - best) / total;
}

inline DiarAnnotation random_annotation(std::mt19937_64& rng, int speakers, const std::string& prefix) {
  std::uniform_int_distribution<int> start(0, 1500), len(10, 400), nturn(1, 4);
  DiarAnnotation a;
  for (int s = 0; s < speakers; ++s) {
    int k = nturn(rng);
    for (int i = 0; i < k; ++i) {
      int b = start(rng), l = len(rng);
      a.turns.push_back({prefix + std::to_string(s), b * 0.01, (b + l) * 0.01});
    }
  }
  return a;
}

// Direct oracle: enumerate permutations of the channel list and concatenate.
inline double brute_cpwer(const TranscriptSet& ref, const TranscriptSet& hyp) {
  const std::size_t n = std::max(ref.size(), hyp.size());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = SIZE_MAX;
  do {
    std::size_t errs = 0;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<std::string> rw = r < ref.size() ? ref.words[r] : std::vector<std::string>{};
      std::vector<std::string> hw = perm[r] < hyp.size() ? hyp.words[perm[r]] : std::vector<std::string>{};
      errs += word_edit_distance(rw, hw);
    }
    best = std::min(best, errs);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(ref.total_words());
}

inline TranscriptSet random_set(std::mt19937_64& rng, int k, const std::string& prefix) {
  static const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f"};
  std::uniform_int_distribution<int> len(1, 8), w(0, 5);
  TranscriptSet s;
  for (int i = 0; i < k; ++i) {
    std::vector<std::string> ws;
    for (int j = len(rng); j > 0; --j) ws.push_back(vocab[w(rng)]);
    s.add(prefix + std::to_string(i), ws);
  }
  return s;
}

// Merge scanning from the end towards the start.
inline std::vector<SpeechSegment> merge_backwards(std::vector<SpeechSegment> s, std::int64_t len) {
  std::sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.end > b.end; });
  std::vector<SpeechSegment> m;
  for (const auto& x : s) {
    if (!m.empty() && m.back().begin - x.end < 12800) {
      m.back().begin = std::min(m.back().begin, x.begin);
    } else {
      m.push_back(x);
    }
  }
  std::reverse(m.begin(), m.end());
  std::vector<SpeechSegment> out;
  for (auto x : m) {
    if (x.length() < 8000) continue;
    x.begin = std::max<std::int64_t>(0, x.begin - 160);
    x.end = std::min<std::int64_t>(len, x.end + 160);
    out.push_back(x);
  }
  return out;
}

inline std::vector<SpeakerEmbedding> blobs(int per_blob, int dim, double sigma,
                                    std::uint64_t seed, std::vector<int>* truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<SpeakerEmbedding> out;
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < per_blob; ++i) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
      v(b) = 1.0;
      for (int d = 0; d < dim; ++d) v(d) += noise(rng);
      out.push_back(SpeakerEmbedding::normalized(v));
      if (truth) truth->push_back(b);
    }
  }
  return out;
}

// Two label vectors describe the same partition.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [x, nx] = ab.try_emplace(a[i], b[i]);
    auto [y, ny] = ba.try_emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

}  // namespace tsep::testing

#endif  // TSEP_TESTS_ORACLES_HPP_
