#include "sfm/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "sfm/compress/decouple.hpp"

namespace sfm::probe {

namespace {

IndexLatency probe_one(const Processor& proc, const Signal& base, std::size_t j) {
  Signal x = base;
  x[j] = std::numeric_limits<double>::quiet_NaN();
  Signal y;
  try {
    y = proc(x);
  } catch (const std::exception& e) {
    throw ProbeError("processor failed with a NaN at input index " + std::to_string(j) + ": " + e.what(), j);
  }
  IndexLatency r;
  r.input_index = j;
  const auto it = std::find_if(y.begin(), y.end(), [](double v) { return std::isnan(v); });
  if (it == y.end()) {
    r.reached = false;
    return r;
  }
  r.latency = static_cast<long>(j) - static_cast<long>(it - y.begin());
  return r;
}

std::vector<IndexLatency> probe_many(const Processor& proc, const Signal& base, const std::vector<std::size_t>& idx,
                                     int threads) {
  std::vector<IndexLatency> out(idx.size());
  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(idx.size())));
  if (nt == 1) {
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = probe_one(proc, base, idx[k]);
    return out;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < nt; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t k = static_cast<std::size_t>(w); k < idx.size(); k += static_cast<std::size_t>(nt)) {
        try {
          out[k] = probe_one(proc, base, idx[k]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, k == 0 ? 0 : k - 1)];
}

}  // namespace

LatencyReport nan_latency_probe(const Processor& proc, std::size_t input_len, const ProbeOptions& opt) {
  if (input_len == 0) throw ConfigError("latency probe: empty input");
  Rng rng(opt.seed);
  Signal base(input_len);
  for (auto& v : base) v = 0.1 * rng.normal();

  std::size_t stride = opt.stride;
  if (stride == 0)
    stride = input_len * 2 <= static_cast<std::size_t>(opt.sample_rate) ? 1
                                                                          : std::max<std::size_t>(1, opt.hop / 4);
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < input_len; j += stride) idx.push_back(j);
  auto results = probe_many(proc, base, idx, opt.threads);

  if (stride > 1) {
    // Latency is hop periodic: refine every sample around the worst coarse index.
    const auto worst = std::max_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
      return (a.reached ? a.latency : std::numeric_limits<long>::min()) <
             (b.reached ? b.latency : std::numeric_limits<long>::min());
    });
    const std::size_t c = worst->input_index;
    std::vector<std::size_t> fine;
    for (std::size_t j = c >= stride ? c - stride + 1 : 0; j < std::min(input_len, c + stride); ++j)
      if (j % stride != 0) fine.push_back(j);
    auto more = probe_many(proc, base, fine, opt.threads);
    results.insert(results.end(), more.begin(), more.end());
    std::sort(results.begin(), results.end(),
              [](const auto& a, const auto& b) { return a.input_index < b.input_index; });
  }

  LatencyReport rep;
  rep.sample_rate = opt.sample_rate;
  rep.evaluations = results.size();
  bool any = false;
  for (const auto& r : results)
    if (r.reached) {
      rep.samples = any ? std::max(rep.samples, r.latency) : r.latency;
      any = true;
    }
  rep.ms = 1000.0 * static_cast<double>(rep.samples) / opt.sample_rate;
  rep.unbounded = rep.samples > static_cast<long>(input_len / 2);
  rep.per_index = std::move(results);
  return rep;
}

TheoreticalLatency theoretical_latency(const dsp::StftConfig& cfg) {
  cfg.validate();
  TheoreticalLatency t;
  t.algorithmic_samples = cfg.window_len - 1;
  t.algorithmic_ms = 1000.0 * (cfg.window_len - 1) / cfg.sample_rate;
  t.total_ms = 1000.0 * (cfg.window_len - 1 + cfg.hop_len) / cfg.sample_rate;
  return t;
}

template <class T>
Processor engine_processor(const stream::Engine<T>& engine, std::uint64_t seed) {
  return [&engine, seed](std::span<const double> x) {
    auto state = stream::init_state(engine, seed);
    return stream::process_audio(engine, state, x);
  };
}

RtfReport measure_streaming(const std::function<void()>& step, int warmup, int n_frames, double hop_seconds,
                            const stream::Clock& clock) {
  if (n_frames < 1) throw ConfigError("rtf: need at least one timed frame");
  RtfReport rep;
  rep.hop_seconds = hop_seconds;
  for (int i = 0; i < warmup; ++i) step();
  rep.frame_seconds.reserve(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) {
    const double t0 = clock();
    step();
    rep.frame_seconds.push_back(clock() - t0);
  }
  rep.median_seconds = percentile(rep.frame_seconds, 0.5);
  rep.p95_seconds = percentile(rep.frame_seconds, 0.95);
  rep.rtf_median = rep.median_seconds / hop_seconds;
  rep.rtf_p95 = rep.p95_seconds / hop_seconds;
  return rep;
}

std::uint64_t engine_flops_per_frame(const stream::EngineConfig& cfg) {
  std::uint64_t f = static_cast<std::uint64_t>(ode::nfe(cfg.solver)) * compress::flop_count(cfg.net);
  if (cfg.predictor) f += compress::flop_count(*cfg.predictor);
  return f;
}

template <class T>
RtfReport streaming_rtf(const stream::Engine<T>& engine, int n_frames, const stream::Clock& clock, std::uint64_t seed) {
  auto state = stream::init_state(engine, seed);
  const int warmup = engine.receptive_field();
  const std::size_t total = static_cast<std::size_t>(warmup + n_frames);
  Rng rng(seed + 1);
  FrameSeq y(total, static_cast<std::size_t>(engine.bins()));
  for (auto& v : y.data()) v = cplx(rng.normal(), rng.normal());
  std::vector<cplx> out(static_cast<std::size_t>(engine.bins()));
  std::size_t t = 0;
  auto rep = measure_streaming([&] { stream::forward_step(engine, state, y.frame(t++), out); }, warmup, n_frames,
                               engine.config().stft.hop_seconds(), clock);
  rep.nfe = engine.nfe();
  rep.flops_per_frame = engine_flops_per_frame(engine.config());
  if (rep.median_seconds > 0.0) rep.gflops_per_second = static_cast<double>(rep.flops_per_frame) / rep.median_seconds / 1e9;
  return rep;
}

double measure_offline(const std::function<void()>& run, double seconds, const stream::Clock& clock) {
  if (!(seconds > 0.0)) throw ConfigError("offline rtf: duration must be positive");
  const double t0 = clock();
  run();
  return (clock() - t0) / seconds;
}

template <class T>
double offline_rtf(const stream::Engine<T>& engine, double seconds, const stream::Clock& clock, std::uint64_t seed) {
  const auto& stft = engine.config().stft;
  const auto n = static_cast<std::size_t>(std::llround(seconds * stft.sample_rate));
  const std::size_t frames = dsp::frame_count(n, stft);
  Rng rng(seed + 1);
  FrameSeq y(frames, static_cast<std::size_t>(engine.bins()));
  for (auto& v : y.data()) v = cplx(rng.normal(), rng.normal());
  return measure_offline([&] { (void)stream::process_offline(engine, y, seed); }, seconds, clock);
}

std::vector<NfeRow> nfe_scaling(const stream::EngineConfig& base, std::span<const int> nfes, int n_frames,
                                const stream::Clock& clock) {
  std::vector<NfeRow> rows;
  for (int n : nfes) {
    auto cfg = base;
    cfg.solver = ode::Euler{n};
    cfg.sde_schedule.clear();
    const stream::Engine<float> e(cfg);
    rows.push_back({n, streaming_rtf(e, n_frames, clock)});
  }
  return rows;
}

template Processor engine_processor<float>(const stream::Engine<float>&, std::uint64_t);
template Processor engine_processor<double>(const stream::Engine<double>&, std::uint64_t);
template RtfReport streaming_rtf<float>(const stream::Engine<float>&, int, const stream::Clock&, std::uint64_t);
template RtfReport streaming_rtf<double>(const stream::Engine<double>&, int, const stream::Clock&, std::uint64_t);
template double offline_rtf<float>(const stream::Engine<float>&, double, const stream::Clock&, std::uint64_t);
template double offline_rtf<double>(const stream::Engine<double>&, double, const stream::Clock&, std::uint64_t);

}  // namespace sfm::probe
