#include "sfm/stream/engine.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>

#include "sfm/alloc_counter.hpp"
#include "sfm/error.hpp"

namespace sfm::stream {

namespace {

constexpr std::uint64_t kInitNoise = 1;
constexpr std::uint64_t kSdeNoise = 2;

// Circular complex normal component (part 0 = real, 1 = imaginary).
inline double noise(const CounterRng& rng, std::int64_t frame, std::uint64_t purpose, int step, int bin, int part) {
  const auto stream = CounterRng::key(static_cast<std::uint64_t>(frame), purpose, static_cast<std::uint64_t>(step));
  return rng.normal(stream, 2 * static_cast<std::uint64_t>(bin) + part) * (std::numbers::sqrt2 / 2.0);
}

const EngineConfig& validated(const EngineConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

void EngineConfig::validate() const {
  stft.validate();
  net.validate();
  ode::validate(solver);
  const int bins = net.input_bins();
  if (net.input_channels() != 4 || net.output_channels() != 2)
    throw ConfigError("engine: flow net must map 2 complex channels (X, Y) to 1, got " +
                      std::to_string(net.input_channels()) + " -> " + std::to_string(net.output_channels()) +
                      " real channels");
  if (!net.time_conditioned) throw ConfigError("engine: flow net must be time conditioned");
  if (bins != stft.bins())
    throw ConfigError("engine: net has " + std::to_string(bins) + " bins but the STFT yields " +
                      std::to_string(stft.bins()));
  net::check_weights(net, weights);
  if (predictor) {
    predictor->validate();
    if (predictor->input_channels() != 2 || predictor->output_channels() != 2 || predictor->time_conditioned)
      throw ConfigError("engine: predictor must be an unconditioned 1 -> 1 complex-channel net");
    if (predictor->input_bins() != bins) throw ConfigError("engine: predictor and flow net bin counts differ");
    net::check_weights(*predictor, predictor_weights);
  }
  flow.validate(static_cast<std::size_t>(bins));
  if (!sde_schedule.empty()) {
    if (static_cast<int>(sde_schedule.size()) != ode::step_count(solver))
      throw ConfigError("engine: SDE schedule has " + std::to_string(sde_schedule.size()) + " entries, solver takes " +
                        std::to_string(ode::step_count(solver)) + " steps");
    for (double s : sde_schedule)
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("engine: SDE noise levels must be finite and >= 0");
  }
}

template <class T>
Engine<T>::Engine(EngineConfig cfg)
    : cfg_(std::move(cfg)), net_(validated(cfg_).net, cfg_.weights) {
  cfg_.stft.probe_mode = cfg_.probe_mode;
  if (cfg_.predictor) predictor_.emplace(*cfg_.predictor, cfg_.predictor_weights);
}

template <class T>
int Engine<T>::effective_receptive_field() const {
  int r = 1 + nfe() * (receptive_field() - 1);
  if (predictor_) r += predictor_->receptive_field() - 1;
  return r;
}

template class Engine<float>;
template class Engine<double>;

template <class T>
int StreamState<T>::layer_states() const noexcept {
  int n = predictor_buffers ? predictor_buffers->buffered_layers() : 0;
  for (const auto& b : buffers) n += b.buffered_layers();
  return n;
}

template <class T>
std::size_t StreamState<T>::buffer_floats() const noexcept {
  std::size_t n = predictor_buffers ? predictor_buffers->floats() : 0;
  for (const auto& b : buffers) n += b.floats();
  return n;
}

template <class T>
StreamState<T> init_state(const Engine<T>& engine, std::uint64_t seed) {
  StreamState<T> s;
  const auto& net = engine.network();
  s.buffers.reserve(static_cast<std::size_t>(engine.nfe()));
  for (int n = 0; n < engine.nfe(); ++n) s.buffers.push_back(net.make_buffers());
  s.scratch = net.make_scratch();
  if (const auto* p = engine.predictor()) {
    s.predictor_buffers = p->make_buffers();
    s.predictor_scratch = p->make_scratch();
  }
  const std::size_t f = static_cast<std::size_t>(engine.bins());
  s.workspace.reserve(2 * f, ode::max_stages(engine.config().solver));
  s.x.assign(2 * f, T{});
  s.y.assign(2 * f, T{});
  s.net_in.assign(4 * f, T{});
  s.net_out.assign(2 * f, T{});
  s.rng = CounterRng(seed);
  return s;
}

template <class T>
void reset_state(StreamState<T>& state) {
  for (auto& b : state.buffers) b.reset();
  if (state.predictor_buffers) state.predictor_buffers->reset();
  state.frame_counter = 0;
  state.field_calls = 0;
}

template <class T>
void sde_post_step(std::span<T> x, int n, std::span<const double> schedule, const CounterRng& rng, std::int64_t frame) {
  if (n < 0 || static_cast<std::size_t>(n) >= schedule.size())
    throw ConfigError("SDE schedule has no noise level for step " + std::to_string(n));
  const double sigma = schedule[static_cast<std::size_t>(n)];
  if (sigma == 0.0) return;
  const int f = static_cast<int>(x.size() / 2);
  for (int k = 0; k < f; ++k) {
    x[k] += static_cast<T>(sigma * noise(rng, frame, kSdeNoise, n, k, 0));
    x[f + k] += static_cast<T>(sigma * noise(rng, frame, kSdeNoise, n, k, 1));
  }
}

template <class T>
void forward_step(const Engine<T>& engine, StreamState<T>& state, std::span<const cplx> y, std::span<cplx> out) {
  const auto& cfg = engine.config();
  const std::size_t f = static_cast<std::size_t>(engine.bins());
  if (y.size() != f || out.size() != f)
    throw ShapeError("forward_step: frame has " + std::to_string(y.size()) + " bins, engine expects " +
                     std::to_string(f));
  if (state.buffers.size() != static_cast<std::size_t>(engine.nfe()) ||
      state.predictor_buffers.has_value() != (engine.predictor() != nullptr) || state.x.size() != 2 * f)
    throw ConfigError("forward_step: stream state was not created for this engine");

  const std::int64_t frame = state.frame_counter;
  std::span<T> xs(state.x), ys(state.y), in(state.net_in), res(state.net_out);
  for (std::size_t k = 0; k < f; ++k) {
    ys[k] = static_cast<T>(y[k].real());
    ys[f + k] = static_cast<T>(y[k].imag());
  }
  if (const auto* p = engine.predictor()) {
    std::copy(ys.begin(), ys.end(), in.begin());
    p->forward_frame(in.first(2 * f), 0.0, *state.predictor_buffers, *state.predictor_scratch, res);
    std::copy(res.begin(), res.end(), ys.begin());
  }
  for (std::size_t k = 0; k < f; ++k) {
    const double sigma = cfg.flow.sigma_y_at(k);
    xs[k] = ys[k] + static_cast<T>(sigma * noise(state.rng, frame, kInitNoise, 0, static_cast<int>(k), 0));
    xs[f + k] = ys[f + k] + static_cast<T>(sigma * noise(state.rng, frame, kInitNoise, 0, static_cast<int>(k), 1));
  }
  std::copy(ys.begin(), ys.end(), in.begin() + 2 * f);

  const auto& net = engine.network();
  const int nfe = engine.nfe();
  state.field_calls = 0;
  auto field = [&](double tau, std::span<const T> x, std::span<T> v) {
    if (state.field_calls >= nfe) throw Error("forward_step: solver made more field calls than its NFE");
    std::copy(x.begin(), x.end(), in.begin());
    net.forward_frame(in, tau, state.buffers[static_cast<std::size_t>(state.field_calls)], state.scratch, v);
    ++state.field_calls;
  };
  ode::SolveOptions opt;
  opt.check_finite = !cfg.probe_mode;
  if (cfg.sde_schedule.empty()) {
    ode::solve<T>(cfg.solver, field, xs, state.workspace, opt);
  } else {
    ode::solve<T>(cfg.solver, field, xs, state.workspace, opt, [&](int step, std::span<T> x) {
      sde_post_step<T>(x, step, cfg.sde_schedule, state.rng, frame);
    });
  }
  if (state.field_calls != nfe) throw Error("forward_step: solver made fewer field calls than its NFE");
  for (std::size_t k = 0; k < f; ++k) out[k] = cplx(static_cast<double>(xs[k]), static_cast<double>(xs[f + k]));
  ++state.frame_counter;
}

template <class T>
FrameSeq process_offline(const Engine<T>& engine, const FrameSeq& y, std::uint64_t seed) {
  const auto& cfg = engine.config();
  const int F = engine.bins();
  const int T_ = static_cast<int>(y.frames());
  if (static_cast<int>(y.bins()) != F)
    throw ShapeError("process_offline: frames have " + std::to_string(y.bins()) + " bins, engine expects " +
                     std::to_string(F));
  if (T_ == 0) return FrameSeq(0, static_cast<std::size_t>(F));
  const CounterRng rng(seed);
  const std::size_t plane = static_cast<std::size_t>(T_) * F;

  net::Activation<T> z(2, 1, T_, F);
  for (int t = 0; t < T_; ++t)
    for (int k = 0; k < F; ++k) {
      z.at(0, 0, t, k) = static_cast<T>(y(t, k).real());
      z.at(1, 0, t, k) = static_cast<T>(y(t, k).imag());
    }
  if (const auto* p = engine.predictor()) z = p->forward(z);

  std::vector<T> x(2 * plane);
  for (int t = 0; t < T_; ++t)
    for (int k = 0; k < F; ++k) {
      const double sigma = cfg.flow.sigma_y_at(static_cast<std::size_t>(k));
      const std::size_t i = static_cast<std::size_t>(t) * F + k;
      x[i] = z.data[i] + static_cast<T>(sigma * noise(rng, t, kInitNoise, 0, k, 0));
      x[plane + i] = z.data[plane + i] + static_cast<T>(sigma * noise(rng, t, kInitNoise, 0, k, 1));
    }

  net::Activation<T> in(4, 1, T_, F);
  std::copy(z.data.begin(), z.data.end(), in.data.begin() + 2 * plane);
  const auto& net = engine.network();
  auto field = [&](double tau, std::span<const T> xv, std::span<T> v) {
    std::copy(xv.begin(), xv.end(), in.data.begin());
    const double taus[] = {tau};
    const auto o = net.forward(in, taus);
    std::copy(o.data.begin(), o.data.end(), v.begin());
  };
  ode::SolveOptions opt;
  opt.check_finite = !cfg.probe_mode;
  ode::SolverWorkspace<T> ws(x.size(), ode::max_stages(cfg.solver));
  auto hook = [&](int step, std::span<T> xv) {
    if (cfg.sde_schedule.empty()) return;
    const double sigma = cfg.sde_schedule.at(static_cast<std::size_t>(step));
    if (sigma == 0.0) return;
    for (int t = 0; t < T_; ++t)
      for (int k = 0; k < F; ++k) {
        const std::size_t i = static_cast<std::size_t>(t) * F + k;
        xv[i] += static_cast<T>(sigma * noise(rng, t, kSdeNoise, step, k, 0));
        xv[plane + i] += static_cast<T>(sigma * noise(rng, t, kSdeNoise, step, k, 1));
      }
  };
  ode::solve<T>(cfg.solver, field, std::span<T>(x), ws, opt, hook);

  FrameSeq out(static_cast<std::size_t>(T_), static_cast<std::size_t>(F));
  for (int t = 0; t < T_; ++t)
    for (int k = 0; k < F; ++k) {
      const std::size_t i = static_cast<std::size_t>(t) * F + k;
      out(t, k) = cplx(static_cast<double>(x[i]), static_cast<double>(x[plane + i]));
    }
  return out;
}

double steady_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

template <class T>
RunReport process_stream(const Engine<T>& engine, StreamState<T>& state, const FrameSource& source,
                         const FrameSink& sink, const Clock& clock) {
  RunReport rep;
  rep.warmup_frames = engine.receptive_field();
  rep.allocations_tracked = alloc::tracking_enabled();
  const std::size_t f = static_cast<std::size_t>(engine.bins());
  std::vector<cplx> in(f), out(f);
  while (source(in)) {
    const std::int64_t idx = state.frame_counter;
    const auto a0 = alloc::allocations();
    const double t0 = clock();
    try {
      forward_step(engine, state, in, out);
    } catch (const NumericError& e) {
      throw NumericError("frame " + std::to_string(idx) + ": " + e.what(), static_cast<int>(idx));
    }
    const double t1 = clock();
    const auto a1 = alloc::allocations();
    if (rep.frames >= rep.warmup_frames) rep.steady_state_allocations += a1 - a0;
    rep.frame_seconds.push_back(t1 - t0);
    ++rep.frames;
    sink(idx, out);
  }
  return rep;
}

template <class T>
Signal process_audio(const Engine<T>& engine, StreamState<T>& state, std::span<const double> audio,
                     RunReport* report) {
  const auto& stft = engine.config().stft;
  const std::size_t n = audio.size();
  if (n == 0) return {};
  const std::size_t hop = static_cast<std::size_t>(stft.hop_len);
  const std::size_t frames = dsp::frame_count(n, stft);
  dsp::StftAnalyzer ana(stft);
  dsp::StftSynthesizer syn(stft);
  std::vector<double> hop_in(hop), hop_out(hop);
  std::vector<cplx> y(static_cast<std::size_t>(engine.bins())), s(y.size());
  Signal out;
  out.reserve(frames * hop);
  if (report) {
    *report = RunReport{};
    report->warmup_frames = engine.receptive_field();
    report->frame_seconds.reserve(frames);
  }
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < hop; ++i) {
      const std::size_t j = t * hop + i;
      hop_in[i] = j < n ? audio[j] : 0.0;
    }
    ana.push(hop_in, y);
    const double t0 = report ? steady_clock_seconds() : 0.0;
    forward_step(engine, state, y, s);
    if (report) {
      report->frame_seconds.push_back(steady_clock_seconds() - t0);
      ++report->frames;
    }
    syn.push(s, hop_out);
    out.insert(out.end(), hop_out.begin(), hop_out.end());
  }
  const std::size_t pad = static_cast<std::size_t>(stft.left_pad());
  return Signal(out.begin() + static_cast<std::ptrdiff_t>(pad), out.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

template <class T>
Signal process_audio_offline(const Engine<T>& engine, std::span<const double> audio, std::uint64_t seed) {
  if (audio.empty()) return {};
  const auto& stft = engine.config().stft;
  const auto y = dsp::stft_analyze(audio, stft);
  return dsp::istft_synthesize(process_offline(engine, y, seed), stft, audio.size());
}

#define SFM_STREAM_INSTANTIATE(T)                                                                                  \
  template struct StreamState<T>;                                                                                 \
  template StreamState<T> init_state<T>(const Engine<T>&, std::uint64_t);                                         \
  template void reset_state<T>(StreamState<T>&);                                                                  \
  template void forward_step<T>(const Engine<T>&, StreamState<T>&, std::span<const cplx>, std::span<cplx>);       \
  template void sde_post_step<T>(std::span<T>, int, std::span<const double>, const CounterRng&, std::int64_t);    \
  template FrameSeq process_offline<T>(const Engine<T>&, const FrameSeq&, std::uint64_t);                          \
  template RunReport process_stream<T>(const Engine<T>&, StreamState<T>&, const FrameSource&, const FrameSink&,   \
                                       const Clock&);                                                             \
  template Signal process_audio<T>(const Engine<T>&, StreamState<T>&, std::span<const double>, RunReport*);       \
  template Signal process_audio_offline<T>(const Engine<T>&, std::span<const double>, std::uint64_t);

SFM_STREAM_INSTANTIATE(float)
SFM_STREAM_INSTANTIATE(double)

}  // namespace sfm::stream
