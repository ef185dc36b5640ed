#pragma once

#include <span>
#include <utility>
#include <vector>

#include "sfm/dsp/corrupt.hpp"
#include "sfm/frames.hpp"
#include "sfm/rng.hpp"

namespace sfm::flow {

// Diagonal noise scales of the probability path. A vector of length 1 is a
// scalar broadcast over all bins; otherwise one entry per frequency bin.
struct FlowPathParams {
  std::vector<double> sigma_y{0.05};
  std::vector<double> sigma_min{0.001};

  double sigma_y_at(std::size_t bin) const { return sigma_y.size() == 1 ? sigma_y[0] : sigma_y.at(bin); }
  double sigma_min_at(std::size_t bin) const { return sigma_min.size() == 1 ? sigma_min[0] : sigma_min.at(bin); }

  // Throws ConfigError unless entries are positive, sigma_min <= sigma_y, and
  // per-bin vectors (if any) have length `bins`.
  void validate(std::size_t bins) const;
  friend bool operator==(const FlowPathParams&, const FlowPathParams&) = default;
};

// Scalar task defaults. BWE has no scalar default and needs bwe_sigma_heuristic.
FlowPathParams default_flow_params(dsp::TaskId task);

struct FlowSample {
  FrameSeq x_tau;
  double tau = 0.0;
  FrameSeq noise;  // standard circular complex normal, shared by X_0, X_1, X_tau
};

FrameSeq path_mean(const FrameSeq& s, const FrameSeq& y, double tau);
// Per-bin standard deviation (1 - tau) sigma_y + tau sigma_min, length `bins`.
std::vector<double> path_std(const FlowPathParams& params, double tau, std::size_t bins);

// Circular complex normal frames: real and imaginary parts each N(0, 1/2).
FrameSeq draw_noise(std::size_t frames, std::size_t bins, Rng& rng);

FlowSample sample_x_tau(const FrameSeq& s, const FrameSeq& y, double tau, const FlowPathParams& params, Rng& rng);
// x_tau for a given noise draw.
FrameSeq x_tau_from_noise(const FrameSeq& s, const FrameSeq& y, double tau, const FlowPathParams& params,
                          const FrameSeq& noise);

// X_1 - X_0 = (S - Y) + (sigma_min - sigma_y) eps.
FrameSeq jfm_target(const FrameSeq& s, const FrameSeq& y, const FlowPathParams& params, const FrameSeq& eps);

// Mean squared error over the 2*T*F real components.
double jfm_loss(const FrameSeq& prediction, const FrameSeq& target);
// d jfm_loss / d prediction, as a complex number (d/dRe + i d/dIm).
FrameSeq jfm_loss_grad(const FrameSeq& prediction, const FrameSeq& target);

// Real-valued loss together with its gradient with respect to the first argument.
struct LossAndGrad {
  double loss = 0.0;
  Signal grad;
};

// 1/2 mean|z - s| + 1/2 sum over Hann windows {256, 512, 768, 1024} at 50%
// overlap of mean ||Z_w| - |S_w||.
double predictor_loss(std::span<const double> z, std::span<const double> s);
LossAndGrad predictor_loss_grad(std::span<const double> z, std::span<const double> s);

// Mean over Hann windows {320, 512, 640} at 75% overlap of the MSE between
// log(max(|X|, 1e-5)) and log(max(|S|, 1e-5)).
double mr_logspec_mse(std::span<const double> x, std::span<const double> s);
LossAndGrad mr_logspec_mse_grad(std::span<const double> x, std::span<const double> s);

// Per-bin RMS of |S - Y| over all calibration frames, clamped below by `floor`.
std::vector<double> bwe_sigma_heuristic(std::span<const std::pair<FrameSeq, FrameSeq>> pairs, double floor = 1e-3);
// sigma_y from the heuristic and sigma_min = 0.001 sigma_y.
FlowPathParams bwe_flow_params(std::span<const std::pair<FrameSeq, FrameSeq>> pairs, double floor = 1e-3);

}  // namespace sfm::flow
