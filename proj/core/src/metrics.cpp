#include "tsep/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tsep/assignment.hpp"

namespace tsep {

namespace {

struct Interval {
  double begin, end;
};

// Per-speaker union of turns, sorted.
std::map<std::string, std::vector<Interval>> speaker_regions(const DiarAnnotation& a) {
  std::map<std::string, std::vector<Interval>> by;
  for (const auto& t : a.turns) by[t.speaker].push_back({t.start_s, t.end_s});
  for (auto& [spk, iv] : by) {
    std::sort(iv.begin(), iv.end(), [](auto& x, auto& y) { return x.begin < y.begin; });
    std::vector<Interval> merged;
    for (const auto& i : iv) {
      if (!merged.empty() && i.begin <= merged.back().end) {
        merged.back().end = std::max(merged.back().end, i.end);
      } else {
        merged.push_back(i);
      }
    }
    iv = std::move(merged);
  }
  return by;
}

bool covers(const std::vector<Interval>& iv, double t) {
  auto it = std::upper_bound(iv.begin(), iv.end(), t,
                             [](double v, const Interval& i) { return v < i.begin; });
  if (it == iv.begin()) return false;
  --it;
  return t < it->end;
}

}  // namespace

nlohmann::json DerResult::to_json() const {
  return {{"der", rate()},
          {"missed_s", missed_s},
          {"false_alarm_s", false_alarm_s},
          {"confusion_s", confusion_s},
          {"scored_speech_s", scored_speech_s},
          {"mapping", mapping}};
}

DerResult der(const DiarAnnotation& ref, const DiarAnnotation& hyp, double collar_s) {
  if (ref.turns.empty()) throw std::invalid_argument("undefined DER: empty reference");
  if (collar_s < 0.0) throw std::invalid_argument("collar must be non-negative");
  ref.validate();
  hyp.validate();

  const auto ref_regions = speaker_regions(ref);
  const auto hyp_regions = speaker_regions(hyp);
  std::vector<std::string> rs, hs;
  for (const auto& [s, _] : ref_regions) rs.push_back(s);
  for (const auto& [s, _] : hyp_regions) hs.push_back(s);

  std::vector<Interval> collars;
  std::vector<double> cuts;
  for (const auto& t : ref.turns) {
    for (double b : {t.start_s, t.end_s}) {
      collars.push_back({b - collar_s, b + collar_s});
      cuts.push_back(std::max(0.0, b - collar_s));
      cuts.push_back(b + collar_s);
      cuts.push_back(b);
    }
  }
  for (const auto& t : hyp.turns) {
    cuts.push_back(t.start_s);
    cuts.push_back(t.end_s);
  }
  std::sort(collars.begin(), collars.end(), [](auto& x, auto& y) { return x.begin < y.begin; });
  std::vector<Interval> no_score;
  for (const auto& c : collars) {
    if (!no_score.empty() && c.begin <= no_score.back().end) {
      no_score.back().end = std::max(no_score.back().end, c.end);
    } else {
      no_score.push_back(c);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Elementary pieces between consecutive cut points; activity is constant
  // on each, so the midpoint decides.
  struct Piece {
    double dur;
    std::vector<int> ref_on, hyp_on;
  };
  std::vector<Piece> pieces;
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rs.size()),
                                                  static_cast<Eigen::Index>(hs.size()));
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    const double mid = 0.5 * (a + b);
    if (b <= a || covers(no_score, mid)) continue;
    Piece p{b - a, {}, {}};
    for (std::size_t r = 0; r < rs.size(); ++r)
      if (covers(ref_regions.at(rs[r]), mid)) p.ref_on.push_back(static_cast<int>(r));
    for (std::size_t h = 0; h < hs.size(); ++h)
      if (covers(hyp_regions.at(hs[h]), mid)) p.hyp_on.push_back(static_cast<int>(h));
    if (p.ref_on.empty() && p.hyp_on.empty()) continue;
    for (int r : p.ref_on)
      for (int h : p.hyp_on) overlap(r, h) += p.dur;
    pieces.push_back(std::move(p));
  }

  DerResult res;
  std::vector<int> map_r2h(rs.size(), -1);
  if (!rs.empty() && !hs.empty()) {
    auto a = min_cost_assignment(-overlap);
    for (std::size_t r = 0; r < rs.size(); ++r) {
      int h = a.row_to_col[r];
      if (h >= 0 && overlap(static_cast<Eigen::Index>(r), h) > 0.0) {
        map_r2h[r] = h;
        res.mapping[rs[r]] = hs[static_cast<std::size_t>(h)];
      }
    }
  }
  for (const auto& p : pieces) {
    const auto nr = static_cast<double>(p.ref_on.size());
    const auto nh = static_cast<double>(p.hyp_on.size());
    double correct = 0.0;
    for (int r : p.ref_on) {
      int h = map_r2h[static_cast<std::size_t>(r)];
      if (h >= 0 && std::find(p.hyp_on.begin(), p.hyp_on.end(), h) != p.hyp_on.end()) {
        correct += 1.0;
      }
    }
    res.scored_speech_s += p.dur * nr;
    res.missed_s += p.dur * std::max(0.0, nr - nh);
    res.false_alarm_s += p.dur * std::max(0.0, nh - nr);
    res.confusion_s += p.dur * (std::min(nr, nh) - correct);
  }
  if (!(res.scored_speech_s > 0.0)) {
    throw std::invalid_argument("undefined DER: no reference speech outside the collar");
  }
  return res;
}

double sdr(const Waveform& ref, const Waveform& est, double floor) {
  if (ref.size() != est.size()) {
    throw std::invalid_argument("sdr: length mismatch (" + std::to_string(ref.size()) +
                                " vs " + std::to_string(est.size()) + ")");
  }
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sig += ref.samples[i] * ref.samples[i];
    const double e = ref.samples[i] - est.samples[i];
    err += e * e;
  }
  if (sig <= 0.0) throw std::invalid_argument("sdr: all-zero reference");
  return 10.0 * std::log10(sig / std::max(floor, err));
}

void TranscriptSet::add(const std::string& id, const std::vector<std::string>& ws) {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) {
    ids.push_back(id);
    words.push_back(ws);
  } else {
    auto& dst = words[static_cast<std::size_t>(it - ids.begin())];
    dst.insert(dst.end(), ws.begin(), ws.end());
  }
}

std::size_t TranscriptSet::total_words() const {
  std::size_t n = 0;
  for (const auto& w : words) n += w.size();
  return n;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TranscriptSet read_transcripts(std::istream& is) {
  TranscriptSet set;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string id;
    if (!(ls >> id) || id[0] == '#') continue;
    std::string rest;
    std::getline(ls, rest);
    set.add(id, tokenize(rest));
  }
  return set;
}

TranscriptSet read_transcripts(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open transcripts " + path.string());
  if (path.extension() != ".json") return read_transcripts(is);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(path.string() + ": expected a JSON object");
  TranscriptSet set;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_string()) {
      set.add(it.key(), tokenize(it->get<std::string>()));
    } else if (it->is_array()) {
      set.add(it.key(), {});
      for (const auto& u : *it) {
        if (!u.is_string()) throw std::runtime_error(path.string() + ": non-string utterance");
        set.add(it.key(), tokenize(u.get<std::string>()));
      }
    } else {
      throw std::runtime_error(path.string() + ": entry '" + it.key() +
                               "' must be a string or a list of strings");
    }
  }
  return set;
}

std::size_t word_edit_distance(const std::vector<std::string>& ref,
                               const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

namespace {

// Square cost matrix padded with empty speakers/channels.
Eigen::MatrixXd cpwer_costs(const TranscriptSet& ref, const TranscriptSet& hyp) {
  if (ref.size() == 0) throw std::invalid_argument("cpwer: empty reference set");
  if (ref.total_words() == 0) throw std::invalid_argument("cpwer: reference has no words");
  const auto n = static_cast<Eigen::Index>(std::max(ref.size(), hyp.size()));
  static const std::vector<std::string> kEmpty;
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = i < static_cast<Eigen::Index>(ref.size()) ? ref.words[i] : kEmpty;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& h = j < static_cast<Eigen::Index>(hyp.size()) ? hyp.words[j] : kEmpty;
      c(i, j) = static_cast<double>(word_edit_distance(r, h));
    }
  }
  return c;
}

CpwerResult finish(const TranscriptSet& ref, const TranscriptSet& hyp, const Assignment& a) {
  CpwerResult res;
  res.ref_words = ref.total_words();
  res.errors = static_cast<std::size_t>(std::llround(a.cost));
  for (std::size_t r = 0; r < ref.size(); ++r) {
    int h = a.row_to_col[r];
    res.ref_to_hyp.push_back(h < static_cast<int>(hyp.size()) ? h : -1);
  }
  return res;
}

}  // namespace

nlohmann::json CpwerResult::to_json() const {
  return {{"cpwer", rate()}, {"errors", errors}, {"ref_words", ref_words},
          {"ref_to_hyp", ref_to_hyp}};
}

CpwerResult cpwer_exhaustive(const TranscriptSet& ref, const TranscriptSet& hyp) {
  auto c = cpwer_costs(ref, hyp);
  return finish(ref, hyp, min_cost_assignment_exhaustive(c));
}

CpwerResult cpwer_assignment(const TranscriptSet& ref, const TranscriptSet& hyp) {
  auto c = cpwer_costs(ref, hyp);
  return finish(ref, hyp, min_cost_assignment(c));
}

CpwerResult cpwer(const TranscriptSet& ref, const TranscriptSet& hyp) {
  if (std::max(ref.size(), hyp.size()) <= kCpwerExhaustiveMax) {
    return cpwer_exhaustive(ref, hyp);
  }
  return cpwer_assignment(ref, hyp);
}

}  // namespace tsep
