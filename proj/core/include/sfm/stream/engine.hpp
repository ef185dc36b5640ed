#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sfm/dsp/stft.hpp"
#include "sfm/flow/flow.hpp"
#include "sfm/frames.hpp"
#include "sfm/net/network.hpp"
#include "sfm/ode/solver.hpp"
#include "sfm/rng.hpp"

namespace sfm::stream {

struct EngineConfig {
  net::Program net;  // flow field v(tau, [X, Y]); 2 complex in, 1 complex out
  net::WeightStore weights;
  std::optional<net::Program> predictor;  // D(Y) -> Z, unconditioned; replaces Y when present
  net::WeightStore predictor_weights;
  ode::SolverSpec solver = ode::Euler{4};
  flow::FlowPathParams flow;
  dsp::StftConfig stft;
  // Optional noise level added back after every solver step (one entry per step).
  std::vector<double> sde_schedule;
  // NaN probing: no finiteness checks, no zero shortcut in (de)compression.
  bool probe_mode = false;

  // Throws ConfigError / ShapeError on inconsistencies between the parts.
  void validate() const;
};

// Immutable, shareable runtime: the config plus networks converted to T.
template <class T>
class Engine {
 public:
  explicit Engine(EngineConfig cfg);

  const EngineConfig& config() const noexcept { return cfg_; }
  const net::Network<T>& network() const noexcept { return net_; }
  const net::Network<T>* predictor() const noexcept { return predictor_ ? &*predictor_ : nullptr; }
  int bins() const noexcept { return net_.bins(); }
  int nfe() const { return ode::nfe(cfg_.solver); }
  // Buffer collections per stream: one per field evaluation, plus one for the predictor.
  int collections() const { return nfe() + (predictor_ ? 1 : 0); }
  int receptive_field() const { return net_.receptive_field(); }
  // Frames after which an output frame no longer depends on older inputs.
  int effective_receptive_field() const;
  // Net evaluations per frame, counting the predictor.
  int evaluations_per_frame() const { return collections(); }

 private:
  EngineConfig cfg_;
  net::Network<T> net_;
  std::optional<net::Network<T>> predictor_;
};

extern template class Engine<float>;
extern template class Engine<double>;

// Per-stream mutable state: N (+1) disjoint collections of layer buffers and
// all per-frame working memory.
template <class T>
struct StreamState {
  std::vector<net::StreamBuffers<T>> buffers;  // one per field evaluation
  std::optional<net::StreamBuffers<T>> predictor_buffers;
  net::FrameScratch<T> scratch;
  std::optional<net::FrameScratch<T>> predictor_scratch;
  ode::SolverWorkspace<T> workspace;
  std::vector<T> x, y, net_in, net_out;  // [Re F, Im F] per complex frame
  std::int64_t frame_counter = 0;
  CounterRng rng;
  int field_calls = 0;  // field evaluations of the frame in progress

  // Total layer buffers over all collections.
  int layer_states() const noexcept;
  std::size_t buffer_floats() const noexcept;
};

template <class T>
StreamState<T> init_state(const Engine<T>& engine, std::uint64_t seed);
template <class T>
void reset_state(StreamState<T>& state);

// Restores one frame: optional predictor pass, x0 = z + sigma_y eps, solver
// over buffer collections (field call n uses collection n), optional SDE
// noise after each step. Does not allocate.
template <class T>
void forward_step(const Engine<T>& engine, StreamState<T>& state, std::span<const cplx> y, std::span<cplx> out);

// Adds sigma_n * eps_n (circular complex, keyed by frame and step) to a frame
// stored as [Re F, Im F]. Throws ConfigError if the schedule lacks step n.
template <class T>
void sde_post_step(std::span<T> x, int n, std::span<const double> schedule, const CounterRng& rng, std::int64_t frame);

// Offline oracle: whole-sequence causal evaluation with the same noise draws.
template <class T>
FrameSeq process_offline(const Engine<T>& engine, const FrameSeq& y, std::uint64_t seed);

struct RunReport {
  std::int64_t frames = 0;
  int warmup_frames = 0;
  std::vector<double> frame_seconds;
  // Heap allocations inside forward_step after warm-up (needs allocation tracking).
  std::uint64_t steady_state_allocations = 0;
  bool allocations_tracked = false;
};

using FrameSource = std::function<bool(std::span<cplx>)>;            // false at end of stream
using FrameSink = std::function<void(std::int64_t, std::span<const cplx>)>;
using Clock = std::function<double()>;                                 // seconds

double steady_clock_seconds();

// Pulls frames until the source is exhausted; errors are rethrown with the frame index.
template <class T>
RunReport process_stream(const Engine<T>& engine, StreamState<T>& state, const FrameSource& source,
                         const FrameSink& sink, const Clock& clock = steady_clock_seconds);

// Waveform in, waveform out (same length, time aligned), streamed hop by hop
// through STFT analysis, forward_step and overlap-add synthesis. When `report`
// is given it receives the wall-clock time of every forward_step.
template <class T>
Signal process_audio(const Engine<T>& engine, StreamState<T>& state, std::span<const double> audio,
                     RunReport* report = nullptr);
// Whole-signal equivalent built on process_offline.
template <class T>
Signal process_audio_offline(const Engine<T>& engine, std::span<const double> audio, std::uint64_t seed);

}  // namespace sfm::stream
