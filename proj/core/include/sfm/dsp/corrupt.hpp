#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "sfm/dsp/mel.hpp"
#include "sfm/dsp/stft.hpp"
#include "sfm/frames.hpp"
#include "sfm/rng.hpp"

namespace sfm::dsp {

enum class TaskId { SE, Dereverb, CodecPF, BWE, PhaseRetrieval, MelVocode };

std::string_view task_name(TaskId task);
TaskId parse_task(std::string_view name);
// True for the tasks whose corruption is a waveform operation.
bool has_waveform_corruption(TaskId task);

struct CorruptionAux {
  std::optional<Signal> noise;                // SE: additive noise, same length as clean
  std::optional<Signal> rir;                  // Dereverb: room impulse response
  std::optional<std::string> codec_command;   // CodecPF: shell template with {in} and {out}
  std::optional<int> bwe_factor;              // BWE: 2 or 4; random when absent
  int sample_rate = 16000;                    // CodecPF: rate handed to the codec
};

// Waveform-domain corruption for SE, Dereverb, CodecPF and BWE.
// Output has the length of `clean`.
Signal corrupt(TaskId task, std::span<const double> clean, const CorruptionAux& aux, Rng& rng);

// Corrupted model features Y for every task: the STFT features of the
// corrupted waveform, or the zero-phase / mel-projected magnitudes.
FrameSeq corrupt_features(TaskId task, std::span<const double> clean, const CorruptionAux& aux,
                          const StftConfig& cfg, Rng& rng, const MelConfig* mel = nullptr);

// Each bin replaced by its magnitude as a real complex number.
FrameSeq zero_phase(const FrameSeq& frames);

// Full linear convolution truncated to the length of x.
Signal convolve_truncated(std::span<const double> x, std::span<const double> h);

// Runs `command_template` with {in}/{out} replaced by temporary float WAV paths.
Signal run_codec(std::span<const double> audio, int sample_rate, const std::string& command_template);

}  // namespace sfm::dsp
