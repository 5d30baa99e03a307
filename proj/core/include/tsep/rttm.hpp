// Diarization annotations and RTTM serialisation.

#ifndef TSEP_RTTM_HPP_
#define TSEP_RTTM_HPP_

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace tsep {

struct SpeakerTurn {
  std::string speaker;
  double start_s = 0.0;
  double end_s = 0.0;

  bool operator==(const SpeakerTurn&) const = default;
};

struct DiarAnnotation {
  std::string recording = "rec";
  std::vector<SpeakerTurn> turns;

  bool operator==(const DiarAnnotation&) const = default;

  std::vector<std::string> speakers() const;  // sorted, unique
  // Throws std::invalid_argument for empty speaker names or end <= start.
  void validate() const;
};

// One line per turn:
//   SPEAKER <file> 1 <tbeg> <tdur> <NA> <NA> <spk> <NA> <NA>
// Times use the shortest representation that round-trips exactly, so
// read_rttm(write_rttm(a)) == a whenever end_s - start_s is exact.
void write_rttm(std::ostream& os, const DiarAnnotation& a);
void write_rttm(const std::filesystem::path& path, const DiarAnnotation& a);

// Throws std::runtime_error("line N: ...") on malformed input or an unknown
// record type; standard non-SPEAKER records are skipped. Turns from
// every recording in the stream are collected; `recording` is taken from
// the first line.
DiarAnnotation read_rttm(std::istream& is);
DiarAnnotation read_rttm(const std::filesystem::path& path);

}  // namespace tsep

#endif  // TSEP_RTTM_HPP_
