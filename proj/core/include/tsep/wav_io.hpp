// 16-bit PCM mono WAV files at 16 kHz.

#ifndef TSEP_WAV_IO_HPP_
#define TSEP_WAV_IO_HPP_

#include <filesystem>

#include "tsep/signal.hpp"

namespace tsep {

// Throws std::runtime_error naming the offending field for any layout other
// than 16-bit integer PCM, one channel, 16000 Hz.
Waveform read_wav(const std::filesystem::path& path);

// Samples are clipped to [-1, 1] and quantised to int16.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace tsep

#endif  // TSEP_WAV_IO_HPP_
