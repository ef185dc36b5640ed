#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "net_support.hpp"
#include "sfm/compress/decouple.hpp"
#include "sfm/probe/probe.hpp"
#include "test_support.hpp"

namespace sfm::probe {
using namespace sfm::testing;
namespace {

dsp::StftConfig stft(int w, int h) {
  dsp::StftConfig c;
  c.window_len = w;
  c.hop_len = h;
  c.probe_mode = true;
  return c;
}

stream::EngineConfig small_engine(const ode::SolverSpec& solver) {
  stream::EngineConfig cfg;
  cfg.net = net::build_program(small_spec());
  cfg.weights = random_weights(cfg.net, 5);
  cfg.solver = solver;
  cfg.stft = stft(16, 8);
  cfg.probe_mode = true;
  return cfg;
}

TEST(Latency, TheoreticalValues) {
  const auto a = theoretical_latency(stft(512, 256));
  EXPECT_EQ(a.algorithmic_samples, 511);
  EXPECT_DOUBLE_EQ(a.algorithmic_ms, 31.9375);
  EXPECT_DOUBLE_EQ(a.total_ms, 47.9375);
  const auto b = theoretical_latency(stft(256, 128));
  EXPECT_DOUBLE_EQ(b.algorithmic_ms, 15.9375);
  EXPECT_DOUBLE_EQ(b.total_ms, 23.9375);
  const auto c = theoretical_latency(stft(64, 64));
  EXPECT_DOUBLE_EQ(c.total_ms, 1000.0 * 127 / 16000);
}

TEST(Latency, IdentityIsZero) {
  const auto r = nan_latency_probe([](std::span<const double> x) { return Signal(x.begin(), x.end()); }, 200);
  EXPECT_EQ(r.samples, 0);
  EXPECT_FALSE(r.unbounded);
  EXPECT_EQ(r.evaluations, 200u);
}

TEST(Latency, DelayLineIsNegativeLookAhead) {
  const auto r = nan_latency_probe(
      [](std::span<const double> x) {
        Signal y(x.size(), 0.0);
        for (std::size_t i = 3; i < x.size(); ++i) y[i] = x[i - 3];
        return y;
      },
      100);
  EXPECT_EQ(r.samples, -3);
}

TEST(Latency, StftRoundTripIsWindowMinusOne) {
  for (const auto& [w, h] : {std::pair{16, 8}, std::pair{32, 8}, std::pair{64, 32}}) {
    const auto cfg = stft(w, h);
    const auto r = nan_latency_probe(
        [&](std::span<const double> x) { return dsp::istft_synthesize(dsp::stft_analyze(x, cfg), cfg, x.size()); },
        static_cast<std::size_t>(w + 6 * h));
    EXPECT_EQ(r.samples, w - 1) << w << "/" << h;
  }
}

TEST(Latency, EngineMatchesTheory) {
  for (const auto& solver : {ode::SolverSpec{ode::Euler{1}}, ode::SolverSpec{ode::Midpoint{2}}}) {
    const stream::Engine<float> e(small_engine(solver));
    const auto r = nan_latency_probe(engine_processor(e), 16 + 8 * 8);
    EXPECT_EQ(r.samples, 15);
    EXPECT_DOUBLE_EQ(r.ms, 1000.0 * 15 / 16000);
  }
}

TEST(Latency, LookAheadFrameIsDetected) {
  const stream::Engine<double> e(small_engine(ode::Euler{1}));
  const auto& cfg = e.config().stft;
  // Feeds the engine frame t + 1 in place of frame t.
  auto peek = [&](std::span<const double> x) {
    const auto y = dsp::stft_analyze(x, cfg);
    FrameSeq shifted(y.frames(), y.bins());
    for (std::size_t t = 0; t + 1 < y.frames(); ++t)
      std::copy(y.frame(t + 1).begin(), y.frame(t + 1).end(), shifted.frame(t).begin());
    return dsp::istft_synthesize(stream::process_offline(e, shifted, 0), cfg, x.size());
  };
  EXPECT_EQ(nan_latency_probe(peek, 16 + 8 * 8).samples, 15 + 8);
  EXPECT_EQ(nan_latency_probe(engine_processor(e), 16 + 8 * 8).samples, 15);
}

TEST(Latency, StridedSweepFindsTheMaximum) {
  const auto cfg = stft(32, 16);
  const Processor p = [&](std::span<const double> x) {
    return dsp::istft_synthesize(dsp::stft_analyze(x, cfg), cfg, x.size());
  };
  ProbeOptions opt;
  opt.stride = 4;
  opt.hop = 16;
  const auto r = nan_latency_probe(p, 300, opt);
  EXPECT_EQ(r.samples, 31);
  EXPECT_LT(r.evaluations, 120u);
  opt.threads = 3;
  const auto r3 = nan_latency_probe(p, 300, opt);
  EXPECT_EQ(r3.samples, 31);
  EXPECT_EQ(r3.evaluations, r.evaluations);
}

TEST(Latency, GlobalDependencyIsUnbounded) {
  const auto r = nan_latency_probe(
      [](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v;
        return Signal(x.size(), s);
      },
      64);
  EXPECT_TRUE(r.unbounded);
  EXPECT_EQ(r.samples, 63);
}

TEST(Latency, CrashingProcessorNamesIndex) {
  try {
    nan_latency_probe(
        [](std::span<const double> x) -> Signal {
          for (double v : x)
            if (std::isnan(v)) throw NumericError("nan", 0);
          return Signal(x.begin(), x.end());
        },
        10);
    FAIL();
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.index(), 0u);
  }
}

// Fake clock advanced only by the stub workload.
struct FakeClock {
  double now = 0.0;
};

TEST(Rtf, StubCostModelIsExact) {
  FakeClock clk;
  const stream::Clock clock = [&] { return clk.now; };
  const double per_call = 0.002;
  for (int nfe : {1, 2, 4, 8}) {
    const auto r = measure_streaming([&] { clk.now += nfe * per_call; }, 3, 50, 0.016, clock);
    EXPECT_NEAR(r.rtf_median, nfe * per_call / 0.016, 1e-9);
    EXPECT_NEAR(r.rtf_p95, nfe * per_call / 0.016, 1e-9);
    EXPECT_EQ(r.frame_seconds.size(), 50u);
    const auto doubled = measure_streaming([&] { clk.now += nfe * per_call; }, 0, 10, 0.032, clock);
    EXPECT_NEAR(doubled.rtf_median, r.rtf_median / 2, 1e-9);
  }
  EXPECT_NEAR(measure_offline([&] { clk.now += 0.25; }, 1.0, clock), 0.25, 1e-12);
  EXPECT_NEAR(measure_offline([&] { clk.now += 0.25; }, 2.0, clock), 0.125, 1e-12);
}

TEST(Rtf, PercentilesOfKnownSamples) {
  FakeClock clk;
  int i = 0;
  const auto r = measure_streaming([&] { clk.now += (++i) * 1e-3; }, 0, 100, 1.0, [&] { return clk.now; });
  EXPECT_NEAR(r.median_seconds, 0.050, 1e-12);
  EXPECT_NEAR(r.p95_seconds, 0.095, 1e-12);
}

TEST(Rtf, EngineReportFields) {
  auto cfg = small_engine(ode::Euler{3});
  cfg.probe_mode = false;
  const stream::Engine<float> e(cfg);
  const auto r = streaming_rtf(e, 20);
  EXPECT_EQ(r.nfe, 3);
  EXPECT_EQ(r.frame_seconds.size(), 20u);
  EXPECT_GT(r.rtf_median, 0.0);
  EXPECT_EQ(r.flops_per_frame, 3 * compress::flop_count(cfg.net));
  EXPECT_DOUBLE_EQ(r.hop_seconds, 8.0 / 16000);
  EXPECT_GT(offline_rtf(e, 0.25), 0.0);
  const int nfes[] = {1, 2};
  const auto rows = nfe_scaling(cfg, nfes, 10);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].report.flops_per_frame, 2 * rows[0].report.flops_per_frame);
}

}  // namespace
}  // namespace sfm::probe
