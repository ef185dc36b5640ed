#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfm/dsp/fft.hpp"
#include "sfm/frames.hpp"

namespace sfm::dsp {

struct StftConfig {
  int window_len = 512;  // W
  int hop_len = 256;     // H
  int sample_rate = 16000;
  double compress_alpha = 0.5;
  // Keep the Nyquist bin (F = W/2 + 1). Off for model features, where F = W/2.
  bool keep_nyquist = false;
  // Disables the exact-zero shortcut in (de)compression so NaNs always propagate.
  bool probe_mode = false;

  // Bins per frame after the optional Nyquist drop.
  int bins() const noexcept { return window_len / 2 + (keep_nyquist ? 1 : 0); }
  int full_bins() const noexcept { return window_len / 2 + 1; }
  // Left zero padding applied before the first analysis frame.
  int left_pad() const noexcept { return window_len - hop_len; }
  double hop_seconds() const noexcept { return static_cast<double>(hop_len) / sample_rate; }

  void validate() const;
  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

// Periodic square-root Hann window of length W.
std::vector<double> sqrt_hann(int window_len);
// Periodic Hann window of length W.
std::vector<double> hann(int window_len);

// Frames needed so that every one of n samples is fully synthesized.
std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg);

// Magnitude compression |x|^a e^{i angle x}; compress(0) = 0 unless probe_mode.
cplx compress(cplx x, double alpha, bool probe_mode = false);
cplx decompress(cplx x, double alpha, bool probe_mode = false);

// Orthonormal STFT, full W/2+1 bins, no compression. Frame t covers samples
// [t*H - (W-H), t*H + H) of the input (zero outside).
FrameSeq stft_raw(std::span<const double> audio, const StftConfig& cfg);
// Inverse of stft_raw: overlap-add with the synthesis window, normalized by the
// periodic squared-window envelope. Returns n_samples samples.
Signal istft_raw(const FrameSeq& frames, const StftConfig& cfg, std::size_t n_samples);

// Model features: stft_raw -> compression -> optional Nyquist drop.
FrameSeq stft_analyze(std::span<const double> audio, const StftConfig& cfg);
// Decompression -> zero Nyquist re-append -> istft_raw. n_samples = 0 selects
// the natural length T*H - (W-H).
Signal istft_synthesize(const FrameSeq& frames, const StftConfig& cfg, std::size_t n_samples = 0);

// Adjoint of istft_synthesize with respect to the real and imaginary parts of
// its input frames, evaluated at `frames`. grad_audio has the synthesized length.
FrameSeq istft_synthesize_backward(const FrameSeq& frames, const StftConfig& cfg,
                                   std::span<const double> grad_audio);

void compress_frames(FrameSeq& frames, const StftConfig& cfg);
FrameSeq drop_nyquist(const FrameSeq& full);
FrameSeq append_zero_nyquist(const FrameSeq& frames);

// Streaming analysis: push H new samples, receive one feature frame that is
// identical to the corresponding stft_analyze frame.
class StftAnalyzer {
 public:
  explicit StftAnalyzer(const StftConfig& cfg);
  const StftConfig& config() const noexcept { return cfg_; }
  void push(std::span<const double> hop, std::span<cplx> frame_out);
  void reset();

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  std::vector<double> history_;  // last W samples, oldest first
  std::vector<cplx> fft_in_, fft_out_;
  Fft fft_;
};

// Streaming synthesis: push one feature frame, receive H finished samples.
// The first left_pad() emitted samples belong to the padding region and are
// dropped by callers that want output aligned with the input.
class StftSynthesizer {
 public:
  explicit StftSynthesizer(const StftConfig& cfg);
  const StftConfig& config() const noexcept { return cfg_; }
  void push(std::span<const cplx> frame, std::span<double> hop_out);
  void reset();

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  std::vector<double> envelope_;  // period H
  std::vector<double> accum_;     // W samples
  std::vector<cplx> fft_in_, fft_out_;
  Fft fft_;
};

}  // namespace sfm::dsp
