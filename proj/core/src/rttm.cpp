#include "tsep/rttm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tsep {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Duration whose sum with `start` reproduces `end` after parsing.
double exact_duration(double start, double end) {
  double d = end - start;
  if (start + d == end) return d;
  double up = d, down = d;
  for (int i = 0; i < 8; ++i) {
    up = std::nextafter(up, INFINITY);
    if (start + up == end) return up;
    down = std::nextafter(down, 0.0);
    if (start + down == end) return down;
  }
  return d;
}

double parse_double(const std::string& s, std::size_t line, const char* field) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() ||
      !std::isfinite(v)) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad " +
                             field + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<std::string> DiarAnnotation::speakers() const {
  std::set<std::string> s;
  for (const auto& t : turns) s.insert(t.speaker);
  return {s.begin(), s.end()};
}

void DiarAnnotation::validate() const {
  for (const auto& t : turns) {
    if (t.speaker.empty()) throw std::invalid_argument("empty speaker name");
    if (!(t.end_s > t.start_s) || t.start_s < 0) {
      throw std::invalid_argument("turn for " + t.speaker +
                                  " must satisfy 0 <= start < end");
    }
  }
}

void write_rttm(std::ostream& os, const DiarAnnotation& a) {
  a.validate();
  for (const auto& t : a.turns) {
    os << "SPEAKER " << a.recording << " 1 " << shortest(t.start_s) << ' '
       << shortest(exact_duration(t.start_s, t.end_s)) << " <NA> <NA> "
       << t.speaker << " <NA> <NA>\n";
  }
}

void write_rttm(const std::filesystem::path& path, const DiarAnnotation& a) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_rttm(out, a);
}

DiarAnnotation read_rttm(std::istream& is) {
  DiarAnnotation a;
  bool first = true;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::istringstream ls(raw);
    std::vector<std::string> f;
    for (std::string tok; ls >> tok;) f.push_back(tok);
    if (f.empty() || f[0].starts_with('#')) continue;
    if (f[0] != "SPEAKER") {
      static const std::set<std::string> kOtherTypes{
          "SEGMENT", "NOSCORE", "NO_RT_METADATA", "LEXEME", "NON-LEX", "NON-SPEECH", "FILLER",
          "EDIT", "IP", "SU", "CB", "A/P", "SPKR-INFO", "STRUCT", "END-OF-LINE"};
      if (kOtherTypes.count(f[0])) continue;
      throw std::runtime_error("line " + std::to_string(line_no) + ": unknown record type '" +
                               f[0] + "'");
    }
    if (f.size() < 8) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected at least 8 fields, found " +
                               std::to_string(f.size()));
    }
    double beg = parse_double(f[3], line_no, "onset");
    double dur = parse_double(f[4], line_no, "duration");
    if (beg < 0) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": negative onset");
    }
    if (!(dur > 0)) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": non-positive duration");
    }
    if (first) {
      a.recording = f[1];
      first = false;
    }
    a.turns.push_back({f[7], beg, beg + dur});
  }
  return a;
}

DiarAnnotation read_rttm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_rttm(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace tsep
