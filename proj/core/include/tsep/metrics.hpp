// Diarization error rate, signal-to-distortion ratio and concatenated
// minimum-permutation word error rate.

#ifndef TSEP_METRICS_HPP_
#define TSEP_METRICS_HPP_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tsep/rttm.hpp"
#include "tsep/signal.hpp"

namespace tsep {

struct DerResult {
  double missed_s = 0.0;
  double false_alarm_s = 0.0;
  double confusion_s = 0.0;
  double scored_speech_s = 0.0;  // reference speaker time, overlap counted per speaker
  std::map<std::string, std::string> mapping;  // reference -> hypothesis speaker

  double rate() const {
    return (missed_s + false_alarm_s + confusion_s) / scored_speech_s;
  }
  nlohmann::json to_json() const;
};

// Scores outside a +-collar_s band around every reference turn boundary.
// Speakers are matched one-to-one to maximise their overlap in the scored
// region. Throws std::invalid_argument("undefined DER ...") when there is no
// scored reference speech.
DerResult der(const DiarAnnotation& ref, const DiarAnnotation& hyp,
              double collar_s = 0.25);

inline constexpr double kSdrErrorFloor = 1e-10;

// 10 log10(sum y^2 / max(floor, sum (y - y_hat)^2)).
double sdr(const Waveform& ref, const Waveform& est, double floor = kSdrErrorFloor);

// Ordered word sequences keyed by speaker (reference) or channel (hypothesis).
struct TranscriptSet {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> words;

  void add(const std::string& id, const std::vector<std::string>& ws);
  std::size_t size() const { return ids.size(); }
  std::size_t total_words() const;
};

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Lines of "<id> <text...>"; repeated ids are concatenated in order. Blank
// lines and lines starting with '#' are skipped.
TranscriptSet read_transcripts(std::istream& is);
// Text file in the line format above, or a JSON object mapping id to a
// string or a list of strings.
TranscriptSet read_transcripts(const std::filesystem::path& path);

std::size_t word_edit_distance(const std::vector<std::string>& ref,
                               const std::vector<std::string>& hyp);

struct CpwerResult {
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  std::vector<int> ref_to_hyp;  // -1 when the reference speaker is unmatched

  double rate() const { return static_cast<double>(errors) / static_cast<double>(ref_words); }
  nlohmann::json to_json() const;
};

inline constexpr std::size_t kCpwerExhaustiveMax = 8;

// Exhaustive search over assignments when max(#ref, #hyp) <= 8, minimum-cost
// assignment on the pairwise distance matrix otherwise.
CpwerResult cpwer(const TranscriptSet& ref, const TranscriptSet& hyp);
CpwerResult cpwer_exhaustive(const TranscriptSet& ref, const TranscriptSet& hyp);
CpwerResult cpwer_assignment(const TranscriptSet& ref, const TranscriptSet& hyp);

}  // namespace tsep

#endif  // TSEP_METRICS_HPP_
