#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "net_support.hpp"
#include "sfm/alloc_counter.hpp"
#include "sfm/error.hpp"
#include "sfm/ode/tableau.hpp"
#include "sfm/stream/engine.hpp"
#include "test_support.hpp"

namespace sfm::stream {
using namespace sfm::testing;
namespace {

dsp::StftConfig stft_for_bins(int bins) {
  dsp::StftConfig c;
  c.window_len = 2 * bins;
  c.hop_len = bins;
  return c;
}

EngineConfig make_config(const ode::SolverSpec& solver, std::uint64_t seed, bool predictor = false) {
  EngineConfig cfg;
  const auto spec = small_spec();
  cfg.net = net::build_program(spec);
  cfg.weights = random_weights(cfg.net, seed);
  if (predictor) {
    cfg.predictor = net::build_program(spec.predictor_variant());
    cfg.predictor_weights = random_weights(*cfg.predictor, seed + 1000);
  }
  cfg.solver = solver;
  cfg.flow.sigma_y = {0.3};
  cfg.flow.sigma_min = {0.01};
  cfg.stft = stft_for_bins(spec.bins);
  return cfg;
}

template <class T>
FrameSeq run_stream(const Engine<T>& engine, const FrameSeq& y, std::uint64_t seed) {
  auto state = init_state(engine, seed);
  FrameSeq out(y.frames(), y.bins());
  for (std::size_t t = 0; t < y.frames(); ++t) forward_step(engine, state, y.frame(t), out.frame(t));
  return out;
}

double rel_dev(const FrameSeq& a, const FrameSeq& b) {
  return max_abs_diff(a, b) / std::max(1e-12, max_abs(b));
}

FrameSeq frames(std::size_t t, std::uint64_t seed) {
  Rng rng(seed);
  return random_frames(t, 8, rng);
}

const std::vector<ode::SolverSpec>& solvers() {
  static const std::vector<ode::SolverSpec> s{
      ode::Euler{1}, ode::Euler{4}, ode::Midpoint{2}, ode::SingleStepRK{ode::builtin_tableau("se")},
      ode::SingleStepRK{ode::builtin_tableau("mel")}, ode::parse_solver("ralston2+3")};
  return s;
}

TEST(Engine, BufferCollectionsCountCalls) {
  for (int n : {1, 2, 4, 5}) {
    const Engine<float> e(make_config(ode::Euler{n}, 1));
    const auto s = init_state(e, 0);
    const int L = e.network().make_buffers().buffered_layers();
    EXPECT_EQ(e.collections(), n);
    EXPECT_EQ(s.layer_states(), n * L);
    const Engine<float> ep(make_config(ode::Euler{n}, 1, true));
    const auto sp = init_state(ep, 0);
    EXPECT_EQ(ep.collections(), n + 1);
    EXPECT_EQ(sp.layer_states(), (n + 1) * L);
  }
}

TEST(Engine, InitStateIsDeterministicAndZeroed) {
  const Engine<float> e(make_config(ode::Midpoint{2}, 2));
  const auto a = init_state(e, 7);
  const auto b = init_state(e, 7);
  ASSERT_EQ(a.buffers.size(), b.buffers.size());
  for (std::size_t i = 0; i < a.buffers.size(); ++i)
    for (std::size_t l = 0; l < a.buffers[i].rings.size(); ++l) {
      EXPECT_EQ(a.buffers[i].rings[l].data, b.buffers[i].rings[l].data);
      for (float v : a.buffers[i].rings[l].data) EXPECT_EQ(v, 0.0f);
    }
  EXPECT_EQ(a.frame_counter, 0);
  // Collections never alias.
  for (std::size_t i = 0; i < a.buffers.size(); ++i)
    for (std::size_t j = i + 1; j < a.buffers.size(); ++j)
      for (std::size_t l = 0; l < a.buffers[i].rings.size(); ++l)
        if (!a.buffers[i].rings[l].data.empty())
          EXPECT_NE(a.buffers[i].rings[l].data.data(), a.buffers[j].rings[l].data.data());
}

TEST(Engine, ZeroFieldWithVanishingNoiseReturnsInput) {
  net::ProgramBuilder b(4, 8, {1, 3, 3, 1}, 8);
  int x = b.conv("c", b.input(), 2, 1, 1);
  x = b.inject("t", x);
  EngineConfig cfg;
  cfg.net = b.finish(x);
  cfg.net.time_conditioned = true;
  Rng rng(3);
  cfg.weights = net::init_weights(cfg.net, rng);
  for (auto& v : cfg.weights.at("c.weight").data) v = 0.0f;
  cfg.solver = ode::Euler{1};
  cfg.flow.sigma_y = {1e-12};
  cfg.flow.sigma_min = {1e-12};
  cfg.stft = stft_for_bins(8);
  const Engine<double> e(cfg);
  const auto y = frames(5, 4);
  EXPECT_LT(max_abs_diff(run_stream(e, y, 1), y), 1e-10);
}

TEST(Engine, StreamMatchesOfflineFloat) {
  int trial = 0;
  for (const auto& solver : solvers()) {
    const Engine<float> e(make_config(solver, 10 + trial));
    const int R = e.receptive_field();
    for (int len : {1, R, 3 * R, 64}) {
      const auto y = frames(static_cast<std::size_t>(len), 20 + trial);
      const auto s = run_stream(e, y, 5);
      const auto o = process_offline(e, y, 5);
      EXPECT_LE(rel_dev(s, o), 1e-4) << ode::describe(solver) << " len " << len;
    }
    ++trial;
  }
}

TEST(Engine, StreamMatchesOfflineDouble) {
  int trial = 0;
  for (const auto& solver : solvers()) {
    const Engine<double> e(make_config(solver, 30 + trial));
    const int R = e.receptive_field();
    for (int len : {1, R, 3 * R}) {
      const auto y = frames(static_cast<std::size_t>(len), 40 + trial);
      EXPECT_LE(rel_dev(run_stream(e, y, 6), process_offline(e, y, 6)), 1e-9) << ode::describe(solver);
    }
    ++trial;
  }
}

TEST(Engine, StreamMatchesOfflineWithPredictor) {
  const Engine<double> e(make_config(ode::Euler{2}, 50, true));
  const auto y = frames(static_cast<std::size_t>(3 * e.receptive_field()), 51);
  EXPECT_LE(rel_dev(run_stream(e, y, 2), process_offline(e, y, 2)), 1e-9);
}

TEST(Engine, SameSeedIsBitIdentical) {
  const Engine<float> e(make_config(ode::SingleStepRK{ode::builtin_tableau("codec")}, 60));
  const auto y = frames(40, 61);
  EXPECT_EQ(run_stream(e, y, 9), run_stream(e, y, 9));
  EXPECT_NE(run_stream(e, y, 9), run_stream(e, y, 10));
}

TEST(Engine, ResetMatchesFreshState) {
  const Engine<float> e(make_config(ode::Euler{2}, 70, true));
  const auto y = frames(20, 71);
  auto state = init_state(e, 3);
  FrameSeq first(20, 8), second(20, 8);
  for (std::size_t t = 0; t < 20; ++t) forward_step(e, state, y.frame(t), first.frame(t));
  reset_state(state);
  for (std::size_t t = 0; t < 20; ++t) forward_step(e, state, y.frame(t), second.frame(t));
  EXPECT_EQ(first, second);
}

TEST(Engine, InterleavedStreamsAreIsolated) {
  const Engine<float> e(make_config(ode::Midpoint{2}, 80));
  const auto ya = frames(30, 81), yb = frames(30, 82);
  auto sa = init_state(e, 1), sb = init_state(e, 2);
  FrameSeq oa(30, 8), ob(30, 8);
  for (std::size_t t = 0; t < 30; ++t) {
    forward_step(e, sa, ya.frame(t), oa.frame(t));
    forward_step(e, sb, yb.frame(t), ob.frame(t));
  }
  EXPECT_EQ(oa, run_stream(e, ya, 1));
  EXPECT_EQ(ob, run_stream(e, yb, 2));
}

EngineConfig shallow_config(const ode::SolverSpec& solver, std::uint64_t seed) {
  net::ProgramBuilder b(4, 8, {1, 3, 3, 1}, 8);
  int x = b.conv("a", b.input(), 4, 3, 3, 2);
  x = b.silu(x);
  x = b.conv("b", x, 2, 2, 1, 1);
  x = b.inject("t", x);
  auto cfg = make_config(solver, seed);
  cfg.net = b.finish(x);
  cfg.net.time_conditioned = true;
  cfg.weights = random_weights(cfg.net, seed);
  return cfg;
}

// Output frame t must ignore inputs older than the effective receptive field
// and (for generic weights) see the oldest frame inside it.
template <class Check>
void dependency_bound(const EngineConfig& cfg, Check&& inside) {
  const Engine<double> e(cfg);
  const int E = e.effective_receptive_field();
  EXPECT_LE(E, e.nfe() * e.receptive_field());
  const int t = E + 2;
  const auto y = frames(static_cast<std::size_t>(t + 1), 91);
  const auto base = run_stream(e, y, 4);
  auto frame_change = [&](int perturbed) {
    auto z = y;
    for (auto& v : z.frame(static_cast<std::size_t>(perturbed))) v += cplx(0.5, -0.5);
    const auto o = run_stream(e, z, 4);
    double d = 0.0;
    for (std::size_t f = 0; f < 8; ++f) d = std::max(d, std::abs(o(t, f) - base(t, f)));
    return d;
  };
  EXPECT_EQ(frame_change(t - E), 0.0) << ode::describe(cfg.solver);
  inside(frame_change(t - E + 1));
}

TEST(Engine, EffectiveDependencyBound) {
  for (const auto& solver : {ode::SolverSpec{ode::Euler{2}}, ode::SolverSpec{ode::Midpoint{1}},
                             ode::SolverSpec{ode::SingleStepRK{ode::builtin_tableau("mel")}}}) {
    // Deep U-Net: edge sensitivities compound below rounding, so only the zero side is checked.
    dependency_bound(make_config(solver, 90), [](double) {});
    dependency_bound(shallow_config(solver, 92), [&](double d) { EXPECT_GT(d, 1e-12) << ode::describe(solver); });
  }
}

TEST(Sde, ZeroScheduleEqualsOde) {
  auto cfg = make_config(ode::Euler{3}, 100);
  const Engine<float> ode_engine(cfg);
  cfg.sde_schedule = {0.0, 0.0, 0.0};
  const Engine<float> sde_engine(cfg);
  const auto y = frames(12, 101);
  EXPECT_EQ(run_stream(ode_engine, y, 3), run_stream(sde_engine, y, 3));
}

TEST(Sde, StreamMatchesOfflineAndIsReproducible) {
  auto cfg = make_config(ode::Euler{3}, 110);
  cfg.sde_schedule = {0.2, 0.1, 0.0};
  const Engine<double> e(cfg);
  const auto y = frames(30, 111);
  const auto a = run_stream(e, y, 8);
  EXPECT_EQ(a, run_stream(e, y, 8));
  EXPECT_LE(rel_dev(a, process_offline(e, y, 8)), 1e-9);
  cfg.sde_schedule = {0.2, 0.1};
  EXPECT_THROW(Engine<double>{cfg}, ConfigError);
}

TEST(Sde, AddedNoiseStdMatchesSchedule) {
  const CounterRng rng(12);
  const std::vector<double> schedule{0.0, 0.37};
  double sum2 = 0.0, sum_re2 = 0.0;
  const int n = 100000;
  std::vector<double> x(2);
  for (int t = 0; t < n; ++t) {
    x = {0.0, 0.0};
    sde_post_step<double>(x, 1, schedule, rng, t);
    sum2 += x[0] * x[0] + x[1] * x[1];
    sum_re2 += x[0] * x[0];
  }
  EXPECT_NEAR(std::sqrt(sum2 / n), 0.37, 0.02 * 0.37);
  EXPECT_NEAR(std::sqrt(sum_re2 / n), 0.37 / std::sqrt(2.0), 0.02 * 0.37);
  x = {1.0, 2.0};
  sde_post_step<double>(x, 0, schedule, rng, 0);
  EXPECT_EQ(x, (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(sde_post_step<double>(x, 2, schedule, rng, 0), ConfigError);
}

TEST(Engine, NoSteadyStateAllocation) {
  if (!alloc::tracking_enabled()) GTEST_SKIP() << "allocation tracking disabled";
  for (bool pred : {false, true}) {
    auto cfg = make_config(ode::SingleStepRK{ode::builtin_tableau("mel")}, 120, pred);
    cfg.sde_schedule = {0.1};
    const Engine<float> e(cfg);
    auto state = init_state(e, 1);
    const auto y = frames(static_cast<std::size_t>(e.receptive_field() + 1000), 121);
    std::size_t t = 0;
    const auto rep = process_stream(
        e, state,
        [&](std::span<cplx> f) {
          if (t == y.frames()) return false;
          std::copy(y.frame(t).begin(), y.frame(t).end(), f.begin());
          ++t;
          return true;
        },
        [](std::int64_t, std::span<const cplx>) {});
    EXPECT_EQ(rep.frames, static_cast<std::int64_t>(y.frames()));
    EXPECT_TRUE(rep.allocations_tracked);
    EXPECT_EQ(rep.steady_state_allocations, 0u);
  }
}

TEST(Engine, AllocationCounterSeesHeapUse) {
  if (!alloc::tracking_enabled()) GTEST_SKIP() << "allocation tracking disabled";
  const auto a0 = alloc::allocations();
  auto* p = new std::vector<int>(100);
  delete p;
  EXPECT_GE(alloc::allocations() - a0, 2u);
}

TEST(Engine, StreamErrorsCarryFrameIndex) {
  const Engine<float> e(make_config(ode::Euler{2}, 130));
  auto state = init_state(e, 0);
  int t = 0;
  try {
    process_stream(
        e, state,
        [&](std::span<cplx> f) {
          std::fill(f.begin(), f.end(), cplx(0.1, 0.0));
          if (t == 6) f[3] = cplx(std::numeric_limits<double>::quiet_NaN(), 0.0);
          return t++ < 10;
        },
        [](std::int64_t, std::span<const cplx>) {});
    FAIL() << "NaN input was accepted";
  } catch (const NumericError& err) {
    EXPECT_EQ(err.index(), 6);
  }
  std::vector<cplx> small(4), out(8);
  EXPECT_THROW(forward_step(e, state, small, out), ShapeError);
}

TEST(Engine, ProbeModePropagatesNaN) {
  auto cfg = make_config(ode::Euler{2}, 140);
  cfg.probe_mode = true;
  const Engine<float> e(cfg);
  auto y = frames(4, 141);
  y(1, 2) = cplx(std::numeric_limits<double>::quiet_NaN(), 0.0);
  const auto o = run_stream(e, y, 0);
  for (std::size_t f = 0; f < 8; ++f) {
    EXPECT_TRUE(std::isfinite(o(0, f).real()));
    EXPECT_TRUE(std::isnan(o(1, f).real()));
    EXPECT_TRUE(std::isnan(o(3, f).real()));
  }
}

TEST(Engine, ConfigValidation) {
  auto cfg = make_config(ode::Euler{1}, 150);
  cfg.stft = stft_for_bins(16);
  EXPECT_THROW(Engine<float>{cfg}, ConfigError);
  cfg = make_config(ode::Euler{1}, 150);
  cfg.weights.erase(cfg.weights.begin());
  EXPECT_THROW(Engine<float>{cfg}, ShapeError);
  cfg = make_config(ode::Euler{1}, 150);
  cfg.net = net::build_program(small_spec().predictor_variant());
  cfg.weights = random_weights(cfg.net, 1);
  EXPECT_THROW(Engine<float>{cfg}, ConfigError);
}

TEST(Engine, AudioStreamMatchesOffline) {
  const Engine<double> e(make_config(ode::Midpoint{1}, 160));
  const auto x = white_noise(301, 161, 0.5);
  auto state = init_state(e, 3);
  const auto s = process_audio(e, state, x);
  const auto o = process_audio_offline(e, x, 3);
  ASSERT_EQ(s.size(), x.size());
  ASSERT_EQ(o.size(), x.size());
  EXPECT_LT(max_abs_diff(s, o), 1e-9 * std::max(1.0, max_abs(std::span<const double>(o))));
}

}  // namespace
}  // namespace sfm::stream
