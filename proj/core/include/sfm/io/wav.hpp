#pragma once

#include <filesystem>
#include <span>

#include "sfm/frames.hpp"

namespace sfm::io {

enum class WavFormat { Pcm16, Float32 };

struct WavData {
  int sample_rate = 0;
  WavFormat format = WavFormat::Float32;
  Signal samples;  // mono, nominal range [-1, 1]
};

// Reads a mono PCM16 or IEEE float32 RIFF/WAVE file. Multi-channel files and
// other encodings raise FormatError; unreadable paths raise IoError.
WavData read_wav(const std::filesystem::path& path);

// PCM16 output is clipped to [-1, 1] and rounded to nearest.
void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate,
               WavFormat format = WavFormat::Float32);

}  // namespace sfm::io
