#include <benchmark/benchmark.h>

#include "sfm/ode/tableau.hpp"
#include "sfm/stream/engine.hpp"

namespace {

using namespace sfm;

stream::EngineConfig desk_config(const ode::SolverSpec& solver) {
  auto spec = net::NetSpec::desk();
  spec.bins = 256;
  stream::EngineConfig cfg;
  cfg.net = net::build_program(spec);
  Rng rng(1);
  net::InitOptions init;
  init.zero_output = false;
  cfg.weights = net::init_weights(cfg.net, rng, init);
  cfg.solver = solver;
  return cfg;
}

void run_frames(benchmark::State& st, const ode::SolverSpec& solver) {
  const stream::Engine<float> engine(desk_config(solver));
  auto state = stream::init_state(engine, 0);
  Rng rng(2);
  std::vector<cplx> y(256), out(256);
  for (auto& v : y) v = cplx(0.1 * rng.normal(), 0.1 * rng.normal());
  for (auto _ : st) {
    stream::forward_step(engine, state, y, out);
    benchmark::DoNotOptimize(out.data());
  }
  const double hop = engine.config().stft.hop_seconds();
  // Elapsed time over streamed audio duration.
  st.counters["rtf"] = benchmark::Counter(static_cast<double>(st.iterations()) * hop,
                                          benchmark::Counter::kIsRate | benchmark::Counter::kInvert);
}

void BM_ForwardStepEuler(benchmark::State& st) { run_frames(st, ode::Euler{static_cast<int>(st.range(0))}); }
BENCHMARK(BM_ForwardStepEuler)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ForwardStepLearned(benchmark::State& st) { run_frames(st, ode::SingleStepRK{ode::builtin_tableau("se")}); }
BENCHMARK(BM_ForwardStepLearned)->Unit(benchmark::kMillisecond);

}  // namespace
