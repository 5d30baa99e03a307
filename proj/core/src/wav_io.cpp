#include "tsep/wav_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace tsep {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::ostream& os, std::uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>((v >> 8) & 0xff));
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& m) {
  throw std::runtime_error(path.string() + ": " + m);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::array<unsigned char, 12> riff{};
  if (!in.read(reinterpret_cast<char*>(riff.data()), riff.size()) ||
      std::memcmp(riff.data(), "RIFF", 4) != 0 ||
      std::memcmp(riff.data() + 8, "WAVE", 4) != 0) {
    fail(path, "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (true) {
    std::array<unsigned char, 8> hdr{};
    if (!in.read(reinterpret_cast<char*>(hdr.data()), hdr.size())) {
      fail(path, "missing data chunk");
    }
    std::uint32_t size = le32(hdr.data() + 4);
    if (std::memcmp(hdr.data(), "fmt ", 4) == 0) {
      if (size < 16) fail(path, "fmt chunk too short");
      std::vector<unsigned char> fmt(size);
      if (!in.read(reinterpret_cast<char*>(fmt.data()), size)) {
        fail(path, "truncated fmt chunk");
      }
      std::uint16_t format = le16(fmt.data());
      channels = le16(fmt.data() + 2);
      rate = le32(fmt.data() + 4);
      bits = le16(fmt.data() + 14);
      if (format != 1) {
        fail(path, "unsupported audio format " + std::to_string(format) +
                       " (expected integer PCM)");
      }
      if (channels != 1) {
        fail(path, "expected mono, found " + std::to_string(channels) +
                       " channels");
      }
      if (bits != 16) {
        fail(path, "expected 16-bit samples, found " + std::to_string(bits));
      }
      if (rate != static_cast<std::uint32_t>(kDefaultSampleRate)) {
        fail(path, "expected 16000 Hz, found " + std::to_string(rate));
      }
      have_fmt = true;
      if (size % 2) in.ignore(1);
    } else if (std::memcmp(hdr.data(), "data", 4) == 0) {
      if (!have_fmt) fail(path, "data chunk before fmt chunk");
      std::vector<unsigned char> raw(size);
      if (!in.read(reinterpret_cast<char*>(raw.data()), size)) {
        fail(path, "truncated data chunk");
      }
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        auto v = static_cast<std::int16_t>(le16(raw.data() + 2 * i));
        w.samples[i] = v / 32768.0;
      }
      return w;
    } else {
      in.ignore(size + (size % 2));
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate != kDefaultSampleRate) {
    throw std::invalid_argument("write_wav: only 16000 Hz is supported");
  }
  w.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, data_bytes);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    auto v = static_cast<std::int16_t>(
        std::clamp(std::lround(c * 32768.0), -32768L, 32767L));
    put16(out, static_cast<std::uint16_t>(v));
  }
  if (!out) fail(path, "write failed");
}

}  // namespace tsep
