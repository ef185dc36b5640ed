#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sfm/dsp/stft.hpp"
#include "sfm/error.hpp"
#include "sfm/flow/flow.hpp"
#include "test_support.hpp"

namespace sfm::flow {
namespace {

using sfm::testing::random_frames;
using sfm::testing::white_noise;

FrameSeq scalar(cplx v) {
  FrameSeq s(1, 1);
  s(0, 0) = v;
  return s;
}

TEST(FlowPath, MeanEndpointsAreExact) {
  Rng rng(1);
  const auto s = random_frames(5, 8, rng), y = random_frames(5, 8, rng);
  EXPECT_EQ(path_mean(s, y, 0.0), y);
  EXPECT_EQ(path_mean(s, y, 1.0), s);
  EXPECT_EQ(path_mean(scalar(2.0), scalar(0.0), 0.5)(0, 0), cplx(1.0));
}

TEST(FlowPath, MeanRejectsBadInput) {
  Rng rng(1);
  EXPECT_THROW(path_mean(random_frames(2, 3, rng), random_frames(2, 4, rng), 0.5), ShapeError);
  EXPECT_THROW(path_mean(scalar(1.0), scalar(1.0), 1.5), ConfigError);
}

TEST(FlowPath, StdEndpointsAndMidpoint) {
  const FlowPathParams p{{0.05}, {0.001}};
  EXPECT_EQ(path_std(p, 0.0, 3)[2], 0.05);
  EXPECT_EQ(path_std(p, 1.0, 3)[0], 0.001);
  EXPECT_NEAR(path_std(p, 0.5, 1)[0], 0.0255, 1e-15);
}

TEST(FlowPath, ParamsValidation) {
  EXPECT_NO_THROW((FlowPathParams{{0.05}, {0.001}}.validate(4)));
  EXPECT_THROW((FlowPathParams{{0.001}, {0.05}}.validate(4)), ConfigError);
  EXPECT_THROW((FlowPathParams{{0.05, 0.05}, {0.001}}.validate(4)), ConfigError);
  EXPECT_THROW((FlowPathParams{{0.0}, {0.0}}.validate(1)), ConfigError);
  EXPECT_THROW(default_flow_params(dsp::TaskId::BWE), ConfigError);
  EXPECT_EQ(default_flow_params(dsp::TaskId::Dereverb).sigma_y[0], 0.35);
  EXPECT_EQ(default_flow_params(dsp::TaskId::MelVocode).sigma_y[0], 0.25);
}

TEST(FlowPath, SampleIsDeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  Rng data(0);
  const auto s = random_frames(4, 6, data), y = random_frames(4, 6, data);
  const FlowPathParams p{{0.3}, {0.01}};
  EXPECT_EQ(sample_x_tau(s, y, 0.3, p, a).x_tau, sample_x_tau(s, y, 0.3, p, b).x_tau);
  EXPECT_NE(sample_x_tau(s, y, 0.3, p, a).x_tau, sample_x_tau(s, y, 0.3, p, c).x_tau);
}

TEST(FlowPath, VanishingNoiseApproachesMean) {
  Rng rng(3), data(4);
  const auto s = random_frames(3, 5, data), y = random_frames(3, 5, data);
  const FlowPathParams p{{1e-12}, {1e-12}};
  const auto sample = sample_x_tau(s, y, 0.4, p, rng);
  EXPECT_LE(sfm::testing::max_abs_diff(sample.x_tau, path_mean(s, y, 0.4)), 1e-10);
}

TEST(FlowPath, MonteCarloStdMatchesPathStd) {
  Rng rng(2024);
  const FlowPathParams p{{0.05}, {0.001}};
  const FrameSeq s(1000, 100), y(1000, 100);  // 10^5 draws
  for (double tau : {0.0, 0.5, 0.9}) {
    const auto sample = sample_x_tau(s, y, tau, p, rng);
    double sq = 0.0;
    for (const auto& v : sample.x_tau.data()) sq += std::norm(v);
    const double emp = std::sqrt(sq / static_cast<double>(sample.x_tau.size()));
    const double expected = path_std(p, tau, 1)[0];
    EXPECT_NEAR(emp / expected, 1.0, 0.02) << "tau=" << tau;
  }
}

TEST(FlowPath, NoiseIsCircular) {
  Rng rng(5);
  const auto eps = draw_noise(500, 200, rng);
  double re = 0, im = 0, cross = 0;
  for (const auto& v : eps.data()) {
    re += v.real() * v.real();
    im += v.imag() * v.imag();
    cross += v.real() * v.imag();
  }
  const double n = static_cast<double>(eps.size());
  EXPECT_NEAR(re / n, 0.5, 0.01);
  EXPECT_NEAR(im / n, 0.5, 0.01);
  EXPECT_NEAR(cross / n, 0.0, 0.01);
}

TEST(Jfm, TargetClosedForms) {
  const FlowPathParams p{{0.05}, {0.001}};
  EXPECT_NEAR(std::abs(jfm_target(scalar(1.0), scalar(0.0), p, scalar(1.0))(0, 0) - cplx(0.951)), 0.0, 1e-15);
  Rng rng(6);
  const auto s = random_frames(3, 4, rng), y = random_frames(3, 4, rng), eps = random_frames(3, 4, rng);
  const FrameSeq zero(3, 4);
  const auto t0 = jfm_target(s, y, p, zero);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(t0.data()[i], s.data()[i] - y.data()[i]);
  const auto t1 = jfm_target(s, s, p, eps);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(std::abs(t1.data()[i] - (0.001 - 0.05) * eps.data()[i]), 0, 1e-15);
}

TEST(Jfm, TargetEqualsEndpointDifference) {
  Rng rng(7);
  const auto s = random_frames(3, 4, rng), y = random_frames(3, 4, rng), eps = random_frames(3, 4, rng);
  const FlowPathParams p{{0.2, 0.3, 0.4, 0.5}, {0.01}};
  const auto x0 = x_tau_from_noise(s, y, 0.0, p, eps);
  const auto x1 = x_tau_from_noise(s, y, 1.0, p, eps);
  const auto t = jfm_target(s, y, p, eps);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(std::abs(t.data()[i] - (x1.data()[i] - x0.data()[i])), 0, 1e-14);
}

TEST(Jfm, TargetIsLinearUnderJointScaling) {
  Rng rng(8);
  const auto s = random_frames(2, 3, rng), y = random_frames(2, 3, rng), eps = random_frames(2, 3, rng);
  const FlowPathParams p{{0.3}, {0.02}};
  const double a = 2.5;
  FrameSeq as = s, ay = y;
  for (auto& v : as.data()) v *= a;
  for (auto& v : ay.data()) v *= a;
  const FlowPathParams ap{{0.3 * a}, {0.02 * a}};
  const auto lhs = jfm_target(as, ay, ap, eps);
  const auto rhs = jfm_target(s, y, p, eps);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(std::abs(lhs.data()[i] - a * rhs.data()[i]), 0, 1e-13);
}

TEST(Jfm, LossValues) {
  Rng rng(9);
  const auto t = random_frames(3, 4, rng);
  EXPECT_EQ(jfm_loss(t, t), 0.0);
  FrameSeq ones(3, 4), zero(3, 4);
  for (auto& v : ones.data()) v = 1.0;
  EXPECT_DOUBLE_EQ(jfm_loss(ones, zero), 0.5);
  EXPECT_DOUBLE_EQ(jfm_loss(scalar(cplx(1, 1)), scalar(cplx(3, 3))), 4.0);
  EXPECT_THROW(jfm_loss(FrameSeq(1, 2), FrameSeq(2, 1)), ShapeError);
}

TEST(Jfm, LossIsPositiveOffTarget) {
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_frames(2, 3, rng), b = random_frames(2, 3, rng);
    EXPECT_GT(jfm_loss(a, b), 0.0);
  }
}

// Directional finite-difference check of a scalar function of a real vector.
template <class F>
void check_gradient(F&& f, const Signal& x, const Signal& grad, std::uint64_t seed, double h = 1e-6) {
  Rng rng(seed);
  for (int trial = 0; trial < 5; ++trial) {
    Signal dir(x.size());
    for (auto& v : dir) v = rng.normal();
    Signal xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xp[i] += h * dir[i];
      xm[i] -= h * dir[i];
    }
    const double fd = (f(xp) - f(xm)) / (2 * h);
    double an = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) an += grad[i] * dir[i];
    EXPECT_LE(std::abs(an - fd), 1e-4 * std::abs(fd)) << "trial " << trial << " analytic " << an << " fd " << fd;
  }
}

TEST(Jfm, LossGradientMatchesFiniteDifference) {
  Rng rng(11);
  const auto p = random_frames(3, 4, rng), t = random_frames(3, 4, rng);
  const auto g = jfm_loss_grad(p, t);
  Signal x, grad;
  for (std::size_t i = 0; i < p.size(); ++i) {
    x.push_back(p.data()[i].real());
    x.push_back(p.data()[i].imag());
    grad.push_back(g.data()[i].real());
    grad.push_back(g.data()[i].imag());
  }
  auto f = [&](const Signal& v) {
    FrameSeq q(3, 4);
    for (std::size_t i = 0; i < q.size(); ++i) q.data()[i] = cplx(v[2 * i], v[2 * i + 1]);
    return jfm_loss(q, t);
  };
  check_gradient(f, x, grad, 1);
}

TEST(PredictorLoss, ZeroWhenEqualAndErrors) {
  const auto s = white_noise(2000, 1);
  EXPECT_EQ(predictor_loss(s, s), 0.0);
  EXPECT_THROW(predictor_loss(s, white_noise(1999, 1)), ShapeError);
}

TEST(PredictorLoss, ImpulseMatchesHandEvaluation) {
  // One frame per resolution: the impulse's spectrum is flat with magnitude w[100].
  Signal z(256, 0.0), s(256, 0.0);
  z[100] = 1.0;
  double expected = 0.5 / 256.0;
  for (int w : {256, 512, 768, 1024}) expected += 0.5 * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * 100 / w));
  EXPECT_NEAR(predictor_loss(z, s), expected, 1e-12);
}

TEST(PredictorLoss, HomogeneousInResidual) {
  const auto z = white_noise(3000, 2);
  const Signal s(3000, 0.0);
  Signal z2 = z;
  for (auto& v : z2) v *= 2.0;
  EXPECT_NEAR(predictor_loss(z2, s), 2.0 * predictor_loss(z, s), 1e-12);
}

TEST(PredictorLoss, GradientMatchesFiniteDifference) {
  const auto z = white_noise(1500, 3), s = white_noise(1500, 4);
  const auto lg = predictor_loss_grad(z, s);
  EXPECT_NEAR(lg.loss, predictor_loss(z, s), 1e-12);
  check_gradient([&](const Signal& v) { return predictor_loss(v, s); }, z, lg.grad, 2, 1e-7);
}

TEST(LogSpec, ClosedForms) {
  const auto s = white_noise(4000, 5);
  EXPECT_EQ(mr_logspec_mse(s, s), 0.0);
  Signal s2 = s;
  for (auto& v : s2) v *= 2.0;
  EXPECT_NEAR(mr_logspec_mse(s2, s), std::log(2.0) * std::log(2.0), 1e-9);
  const Signal silence(4000, 0.0);
  EXPECT_EQ(mr_logspec_mse(silence, silence), 0.0);
  EXPECT_THROW(mr_logspec_mse(s, Signal(10, 0.0)), ShapeError);
}

TEST(LogSpec, GradientMatchesFiniteDifference) {
  const auto x = white_noise(1400, 6), s = white_noise(1400, 7);
  const auto lg = mr_logspec_mse_grad(x, s);
  EXPECT_NEAR(lg.loss, mr_logspec_mse(x, s), 1e-12);
  check_gradient([&](const Signal& v) { return mr_logspec_mse(v, s); }, x, lg.grad, 3);
}

TEST(BweHeuristic, FloorAndHandComputation) {
  Rng rng(12);
  const auto s = random_frames(4, 3, rng);
  std::vector<std::pair<FrameSeq, FrameSeq>> same{{s, s}};
  for (double v : bwe_sigma_heuristic(same, 1e-3)) EXPECT_EQ(v, 1e-3);

  FrameSeq a(2, 2), b(2, 2);
  a(0, 0) = 3.0;  // residuals in bin 0: 3 and 4 -> RMS sqrt(12.5)
  a(1, 0) = cplx(0, 4.0);
  a(0, 1) = 1e-6;
  std::vector<std::pair<FrameSeq, FrameSeq>> one{{a, b}};
  const auto sig = bwe_sigma_heuristic(one, 1e-3);
  EXPECT_NEAR(sig[0], std::sqrt(12.5), 1e-12);
  EXPECT_EQ(sig[1], 1e-3);
  const auto params = bwe_flow_params(one, 1e-3);
  EXPECT_NEAR(params.sigma_min[0], 0.001 * std::sqrt(12.5), 1e-15);
  EXPECT_THROW(bwe_sigma_heuristic({}, 1e-3), ConfigError);
}

TEST(BweHeuristic, BinsBelowCutoffStayNearFloor) {
  dsp::StftConfig cfg;
  const auto clean = white_noise(8000, 13, 0.1);
  dsp::CorruptionAux aux;
  aux.bwe_factor = 2;
  Rng rng(0);
  std::vector<std::pair<FrameSeq, FrameSeq>> pairs{
      {dsp::stft_analyze(clean, cfg), dsp::corrupt_features(dsp::TaskId::BWE, clean, aux, cfg, rng)}};
  const auto sig = bwe_sigma_heuristic(pairs, 1e-3);
  // Bin 64 is 2 kHz (deep passband), bin 200 is 6.25 kHz (stop band).
  EXPECT_LT(sig[64], 0.05 * sig[200]);
}

}  // namespace
}  // namespace sfm::flow
