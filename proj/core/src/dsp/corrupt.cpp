#include "sfm/dsp/corrupt.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cstdlib>
#include <filesystem>

#include "sfm/dsp/resample.hpp"
#include "sfm/error.hpp"
#include "sfm/io/wav.hpp"

namespace sfm::dsp {
namespace {

constexpr std::array<std::string_view, 6> kTaskNames = {"se", "dereverb", "codec", "bwe", "pr", "mel"};

std::string replace_all(std::string s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string shell_quote(const std::string& s) { return "'" + replace_all(s, "'", "'\\''") + "'"; }

}  // namespace

std::string_view task_name(TaskId task) { return kTaskNames[static_cast<std::size_t>(task)]; }

TaskId parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (kTaskNames[i] == name) return static_cast<TaskId>(i);
  throw ConfigError("unknown task '" + std::string(name) + "' (expected se, dereverb, codec, bwe, pr or mel)");
}

bool has_waveform_corruption(TaskId task) {
  return task != TaskId::PhaseRetrieval && task != TaskId::MelVocode;
}

Signal convolve_truncated(std::span<const double> x, std::span<const double> h) {
  Signal y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t kmax = std::min(h.size(), i + 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += h[k] * x[i - k];
    y[i] = acc;
  }
  return y;
}

Signal run_codec(std::span<const double> audio, int sample_rate, const std::string& command_template) {
  static std::atomic<unsigned> counter{0};
  const auto dir = std::filesystem::temp_directory_path();
  const std::string stem = "sfm_codec_" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const auto in_path = dir / (stem + "_in.wav");
  const auto out_path = dir / (stem + "_out.wav");
  io::write_wav(in_path, audio, sample_rate, io::WavFormat::Float32);
  std::string cmd = replace_all(command_template, "{in}", shell_quote(in_path.string()));
  cmd = replace_all(cmd, "{out}", shell_quote(out_path.string()));
  const int raw = std::system(cmd.c_str());
  std::error_code ec;
  std::filesystem::remove(in_path, ec);
  const int status = raw == -1 ? -1 : (WIFEXITED(raw) ? WEXITSTATUS(raw) : 128 + WTERMSIG(raw));
  if (status != 0) {
    std::filesystem::remove(out_path, ec);
    throw ExternalToolError("codec command failed with exit status " + std::to_string(status) + ": " + cmd, status);
  }
  io::WavData decoded;
  try {
    decoded = io::read_wav(out_path);
  } catch (const Error& e) {
    std::filesystem::remove(out_path, ec);
    throw ExternalToolError(std::string("codec command produced no readable output: ") + e.what(), 0);
  }
  std::filesystem::remove(out_path, ec);
  if (decoded.sample_rate != sample_rate)
    throw ExternalToolError("codec output sample rate " + std::to_string(decoded.sample_rate) + " differs from input",
                            0);
  decoded.samples.resize(audio.size(), 0.0);
  return decoded.samples;
}

Signal corrupt(TaskId task, std::span<const double> clean, const CorruptionAux& aux, Rng& rng) {
  switch (task) {
    case TaskId::SE: {
      if (!aux.noise) throw ConfigError("SE corruption requires a noise signal");
      if (aux.noise->size() != clean.size()) throw ShapeError("SE noise length differs from clean length");
      Signal y(clean.begin(), clean.end());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*aux.noise)[i];
      return y;
    }
    case TaskId::Dereverb:
      if (!aux.rir || aux.rir->empty()) throw ConfigError("Dereverb corruption requires a room impulse response");
      return convolve_truncated(clean, *aux.rir);
    case TaskId::CodecPF:
      if (!aux.codec_command) throw ConfigError("CodecPF corruption requires a codec command");
      return run_codec(clean, aux.sample_rate, *aux.codec_command);
    case TaskId::BWE: {
      const int f = aux.bwe_factor ? *aux.bwe_factor : (rng.below(2) == 0 ? 2 : 4);
      if (f != 2 && f != 4) throw ConfigError("BWE factor must be 2 or 4, got " + std::to_string(f));
      return upsample(downsample(clean, f), f, clean.size());
    }
    case TaskId::PhaseRetrieval:
    case TaskId::MelVocode:
      break;
  }
  throw ConfigError("task '" + std::string(task_name(task)) + "' has no waveform corruption; use corrupt_features");
}

FrameSeq zero_phase(const FrameSeq& frames) {
  FrameSeq out(frames.frames(), frames.bins());
  auto src = frames.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = cplx(std::abs(src[i]), 0.0);
  return out;
}

FrameSeq corrupt_features(TaskId task, std::span<const double> clean, const CorruptionAux& aux,
                          const StftConfig& cfg, Rng& rng, const MelConfig* mel) {
  if (has_waveform_corruption(task)) return stft_analyze(corrupt(task, clean, aux, rng), cfg);
  if (task == TaskId::PhaseRetrieval) return zero_phase(stft_analyze(clean, cfg));

  MelConfig local;
  if (!mel) {
    local = make_mel_config(80, cfg.window_len, cfg.sample_rate, 0.0, cfg.sample_rate / 2.0);
    mel = &local;
  }
  if (mel->n_fft != cfg.window_len)
    throw ConfigError("mel n_fft " + std::to_string(mel->n_fft) + " differs from window_len " +
                      std::to_string(cfg.window_len));
  auto full = mel_project_frames(stft_raw(clean, cfg), *mel);
  compress_frames(full, cfg);
  if (cfg.keep_nyquist || full.empty()) return full.empty() ? FrameSeq(0, cfg.bins()) : full;
  return drop_nyquist(full);
}

}  // namespace sfm::dsp
