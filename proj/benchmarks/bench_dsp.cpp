#include <benchmark/benchmark.h>

#include "sfm/dsp/stft.hpp"
#include "sfm/rng.hpp"

namespace {

using namespace sfm;

void BM_StftAnalyzerPush(benchmark::State& st) {
  dsp::StftConfig cfg;
  cfg.window_len = static_cast<int>(st.range(0));
  cfg.hop_len = cfg.window_len / 2;
  dsp::StftAnalyzer analyzer(cfg);
  Rng rng(1);
  std::vector<double> hop(static_cast<std::size_t>(cfg.hop_len));
  for (auto& v : hop) v = rng.normal();
  std::vector<cplx> frame(static_cast<std::size_t>(cfg.bins()));
  for (auto _ : st) {
    analyzer.push(hop, frame);
    benchmark::DoNotOptimize(frame.data());
  }
}
BENCHMARK(BM_StftAnalyzerPush)->Arg(256)->Arg(512);

void BM_StftSynthesizerPush(benchmark::State& st) {
  dsp::StftConfig cfg;
  cfg.window_len = static_cast<int>(st.range(0));
  cfg.hop_len = cfg.window_len / 2;
  dsp::StftSynthesizer synth(cfg);
  Rng rng(2);
  std::vector<cplx> frame(static_cast<std::size_t>(cfg.bins()));
  for (auto& v : frame) v = cplx(rng.normal(), rng.normal());
  std::vector<double> hop(static_cast<std::size_t>(cfg.hop_len));
  for (auto _ : st) {
    synth.push(frame, hop);
    benchmark::DoNotOptimize(hop.data());
  }
}
BENCHMARK(BM_StftSynthesizerPush)->Arg(256)->Arg(512);

void BM_StftAnalyzeOffline(benchmark::State& st) {
  const dsp::StftConfig cfg;
  Rng rng(3);
  std::vector<double> x(16000);
  for (auto& v : x) v = rng.normal();
  for (auto _ : st) benchmark::DoNotOptimize(dsp::stft_analyze(x, cfg));
}
BENCHMARK(BM_StftAnalyzeOffline)->Unit(benchmark::kMillisecond);

}  // namespace
