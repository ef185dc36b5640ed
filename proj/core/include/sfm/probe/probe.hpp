#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sfm/dsp/stft.hpp"
#include "sfm/error.hpp"
#include "sfm/frames.hpp"
#include "sfm/stream/engine.hpp"

namespace sfm::probe {

// A processor failed while a NaN was seeded at input `index`.
class ProbeError : public Error {
 public:
  ProbeError(const std::string& what, std::size_t index) : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

using Processor = std::function<Signal(std::span<const double>)>;

struct IndexLatency {
  std::size_t input_index = 0;
  long latency = 0;  // input index - first NaN output index; negative if the output lags
  bool reached = true;
};

struct LatencyReport {
  long samples = 0;  // maximum over probed indices
  double ms = 0.0;
  bool unbounded = false;  // latency exceeds half the input: grows with the input length
  int sample_rate = 16000;
  std::vector<IndexLatency> per_index;
  std::size_t evaluations = 0;
};

struct ProbeOptions {
  int sample_rate = 16000;
  // 0 selects every sample for inputs up to 0.5 s, else hop / 4 with local refinement.
  std::size_t stride = 0;
  int hop = 256;
  int threads = 1;
  std::uint64_t seed = 1;  // background signal
};

// Seeds one NaN per probed input index and reports the largest distance from
// the seeded index back to the first NaN in the output.
LatencyReport nan_latency_probe(const Processor& proc, std::size_t input_len, const ProbeOptions& opt = {});

struct TheoreticalLatency {
  int algorithmic_samples = 0;
  double algorithmic_ms = 0.0;
  double total_ms = 0.0;
};
// (W - 1) / fs and (W - 1 + H) / fs.
TheoreticalLatency theoretical_latency(const dsp::StftConfig& cfg);

// NaN-infectious waveform processor running the engine frame by frame.
template <class T>
Processor engine_processor(const stream::Engine<T>& engine, std::uint64_t seed = 0);

struct RtfReport {
  std::vector<double> frame_seconds;  // after warm-up
  double median_seconds = 0.0, p95_seconds = 0.0;
  double hop_seconds = 0.0;
  double rtf_median = 0.0, rtf_p95 = 0.0;  // per-frame time / hop duration
  int nfe = 0;
  std::uint64_t flops_per_frame = 0;
  double gflops_per_second = 0.0;
};

// Times `step` n_frames times after `warmup` untimed calls.
RtfReport measure_streaming(const std::function<void()>& step, int warmup, int n_frames, double hop_seconds,
                            const stream::Clock& clock);

template <class T>
RtfReport streaming_rtf(const stream::Engine<T>& engine, int n_frames, const stream::Clock& clock = stream::steady_clock_seconds,
                        std::uint64_t seed = 0);

// Net evaluation cost of one frame for an engine (all field calls plus predictor).
std::uint64_t engine_flops_per_frame(const stream::EngineConfig& cfg);

// Wall time of one whole-signal call divided by the signal duration.
double measure_offline(const std::function<void()>& run, double seconds, const stream::Clock& clock);
template <class T>
double offline_rtf(const stream::Engine<T>& engine, double seconds = 1.0,
                   const stream::Clock& clock = stream::steady_clock_seconds, std::uint64_t seed = 0);

struct NfeRow {
  int nfe = 0;
  RtfReport report;
};
// Streaming RTF with Euler-N for each N, same net and weights.
std::vector<NfeRow> nfe_scaling(const stream::EngineConfig& base, std::span<const int> nfes, int n_frames,
                                const stream::Clock& clock = stream::steady_clock_seconds);

}  // namespace sfm::probe
