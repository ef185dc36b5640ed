#include "sfm/flow/flow.hpp"

#include <cmath>
#include <numbers>

#include "sfm/dsp/fft.hpp"
#include "sfm/dsp/stft.hpp"
#include "sfm/error.hpp"

namespace sfm::flow {
namespace {

void require_same(const FrameSeq& a, const FrameSeq& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.frames()) + "x" +
                     std::to_string(a.bins()) + " vs " + std::to_string(b.frames()) + "x" +
                     std::to_string(b.bins()) + ")");
}

void require_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1], got " + std::to_string(tau));
}

// Frames of length W starting at sample 0 with hop `hop`, the tail zero padded.
std::size_t spectrogram_frames(std::size_t n, std::size_t W, std::size_t hop) {
  if (n <= W) return 1;
  return 1 + (n - W + hop - 1) / hop;
}

struct Spectrogram {
  std::size_t window = 0, hop = 0, frames = 0, bins = 0;
  std::vector<cplx> data;  // frames x bins
};

Spectrogram spectrogram(std::span<const double> x, std::size_t W, std::size_t hop, const std::vector<double>& win,
                        dsp::Fft& fft) {
  Spectrogram sp{W, hop, spectrogram_frames(x.size(), W, hop), W / 2 + 1, {}};
  sp.data.resize(sp.frames * sp.bins);
  std::vector<cplx> in(W), out(W);
  for (std::size_t t = 0; t < sp.frames; ++t) {
    for (std::size_t n = 0; n < W; ++n) {
      const std::size_t i = t * hop + n;
      in[n] = cplx(i < x.size() ? x[i] * win[n] : 0.0, 0.0);
    }
    fft.forward(in, out);
    std::copy_n(out.begin(), sp.bins, sp.data.begin() + static_cast<std::ptrdiff_t>(t * sp.bins));
  }
  return sp;
}

// Accumulates into grad the adjoint of the one-sided windowed DFT applied to
// per-bin complex cotangents u (frames x bins): grad_n += w_n Re(sum_k u_k e^{+i 2 pi k n / W}).
void spectrogram_adjoint(const std::vector<cplx>& u, const Spectrogram& sp, const std::vector<double>& win,
                         dsp::Fft& fft, std::span<double> grad) {
  const std::size_t W = sp.window;
  std::vector<cplx> in(W), out(W);
  for (std::size_t t = 0; t < sp.frames; ++t) {
    std::fill(in.begin(), in.end(), cplx{});
    std::copy_n(u.begin() + static_cast<std::ptrdiff_t>(t * sp.bins), sp.bins, in.begin());
    fft.inverse(in, out);
    for (std::size_t n = 0; n < W; ++n) {
      const std::size_t i = t * sp.hop + n;
      if (i < grad.size()) grad[i] += win[n] * out[n].real();
    }
  }
}

constexpr std::size_t kPredictorWindows[] = {256, 512, 768, 1024};
constexpr std::size_t kLogSpecWindows[] = {320, 512, 640};
constexpr double kLogFloor = 1e-5;

template <bool WithGrad>
double predictor_loss_impl(std::span<const double> z, std::span<const double> s, Signal* grad) {
  if (z.size() != s.size()) throw ShapeError("predictor_loss: length mismatch");
  if (z.empty()) throw ShapeError("predictor_loss: empty input");
  const double n = static_cast<double>(z.size());
  if constexpr (WithGrad) grad->assign(z.size(), 0.0);
  double time_term = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - s[i];
    time_term += std::abs(d);
    if constexpr (WithGrad) (*grad)[i] += 0.5 * ((d > 0) - (d < 0)) / n;
  }
  double loss = 0.5 * time_term / n;
  for (std::size_t W : kPredictorWindows) {
    const auto win = dsp::hann(static_cast<int>(W));
    dsp::Fft fft(W);
    const auto zs = spectrogram(z, W, W / 2, win, fft);
    const auto ss = spectrogram(s, W, W / 2, win, fft);
    const double count = static_cast<double>(zs.data.size());
    double term = 0.0;
    std::vector<cplx> u;
    if constexpr (WithGrad) u.assign(zs.data.size(), cplx{});
    for (std::size_t k = 0; k < zs.data.size(); ++k) {
      const double mz = std::abs(zs.data[k]);
      const double d = mz - std::abs(ss.data[k]);
      term += std::abs(d);
      if constexpr (WithGrad) {
        if (mz > 0.0) u[k] = (0.5 * ((d > 0) - (d < 0)) / count) * zs.data[k] / mz;
      }
    }
    loss += 0.5 * term / count;
    if constexpr (WithGrad) spectrogram_adjoint(u, zs, win, fft, *grad);
  }
  return loss;
}

template <bool WithGrad>
double logspec_impl(std::span<const double> x, std::span<const double> s, Signal* grad) {
  if (x.size() != s.size()) throw ShapeError("mr_logspec_mse: length mismatch");
  if (x.empty()) throw ShapeError("mr_logspec_mse: empty input");
  if constexpr (WithGrad) grad->assign(x.size(), 0.0);
  const double nres = static_cast<double>(std::size(kLogSpecWindows));
  double loss = 0.0;
  for (std::size_t W : kLogSpecWindows) {
    const auto win = dsp::hann(static_cast<int>(W));
    dsp::Fft fft(W);
    const auto xs = spectrogram(x, W, W / 4, win, fft);
    const auto ss = spectrogram(s, W, W / 4, win, fft);
    const double count = static_cast<double>(xs.data.size());
    double term = 0.0;
    std::vector<cplx> u;
    if constexpr (WithGrad) u.assign(xs.data.size(), cplx{});
    for (std::size_t k = 0; k < xs.data.size(); ++k) {
      const double mx = std::abs(xs.data[k]);
      const double d = std::log(std::max(mx, kLogFloor)) - std::log(std::max(std::abs(ss.data[k]), kLogFloor));
      term += d * d;
      if constexpr (WithGrad) {
        if (mx > kLogFloor) u[k] = (2.0 * d / (count * nres * mx)) * xs.data[k] / mx;
      }
    }
    loss += term / count / nres;
    if constexpr (WithGrad) spectrogram_adjoint(u, xs, win, fft, *grad);
  }
  return loss;
}

}  // namespace

void FlowPathParams::validate(std::size_t bins) const {
  if (sigma_y.empty() || sigma_min.empty()) throw ConfigError("FlowPathParams: empty sigma vector");
  for (const auto* v : {&sigma_y, &sigma_min})
    if (v->size() != 1 && v->size() != bins)
      throw ConfigError("FlowPathParams: sigma vector length " + std::to_string(v->size()) +
                        " matches neither 1 nor " + std::to_string(bins) + " bins");
  for (std::size_t f = 0; f < bins; ++f) {
    const double sy = sigma_y_at(f), sm = sigma_min_at(f);
    if (!(sy > 0.0) || !(sm > 0.0)) throw ConfigError("FlowPathParams: sigmas must be positive");
    if (sm > sy) throw ConfigError("FlowPathParams: sigma_min exceeds sigma_y at bin " + std::to_string(f));
  }
}

FlowPathParams default_flow_params(dsp::TaskId task) {
  using dsp::TaskId;
  switch (task) {
    case TaskId::SE:
      return {{0.05}, {0.001}};
    case TaskId::PhaseRetrieval:
    case TaskId::MelVocode:
      return {{0.25}, {0.001}};
    case TaskId::Dereverb:
    case TaskId::CodecPF:
      return {{0.35}, {0.001}};
    case TaskId::BWE:
      break;
  }
  throw ConfigError("BWE uses a per-band sigma_y; derive it with bwe_sigma_heuristic");
}

FrameSeq path_mean(const FrameSeq& s, const FrameSeq& y, double tau) {
  require_same(s, y, "path_mean");
  require_tau(tau);
  FrameSeq out(s.frames(), s.bins());
  auto sd = s.data(), yd = y.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = (1.0 - tau) * yd[i] + tau * sd[i];
  return out;
}

std::vector<double> path_std(const FlowPathParams& params, double tau, std::size_t bins) {
  require_tau(tau);
  std::vector<double> out(bins);
  for (std::size_t f = 0; f < bins; ++f) out[f] = (1.0 - tau) * params.sigma_y_at(f) + tau * params.sigma_min_at(f);
  return out;
}

FrameSeq draw_noise(std::size_t frames, std::size_t bins, Rng& rng) {
  FrameSeq eps(frames, bins);
  const double scale = std::numbers::sqrt2 / 2.0;
  for (auto& v : eps.data()) {
    const double re = rng.normal();
    const double im = rng.normal();
    v = cplx(re * scale, im * scale);
  }
  return eps;
}

FrameSeq x_tau_from_noise(const FrameSeq& s, const FrameSeq& y, double tau, const FlowPathParams& params,
                          const FrameSeq& noise) {
  require_same(s, noise, "x_tau_from_noise");
  auto x = path_mean(s, y, tau);
  const auto sd = path_std(params, tau, s.bins());
  for (std::size_t t = 0; t < x.frames(); ++t)
    for (std::size_t f = 0; f < x.bins(); ++f) x(t, f) += sd[f] * noise(t, f);
  return x;
}

FlowSample sample_x_tau(const FrameSeq& s, const FrameSeq& y, double tau, const FlowPathParams& params, Rng& rng) {
  FlowSample out;
  out.tau = tau;
  out.noise = draw_noise(s.frames(), s.bins(), rng);
  out.x_tau = x_tau_from_noise(s, y, tau, params, out.noise);
  return out;
}

FrameSeq jfm_target(const FrameSeq& s, const FrameSeq& y, const FlowPathParams& params, const FrameSeq& eps) {
  require_same(s, y, "jfm_target");
  require_same(s, eps, "jfm_target");
  FrameSeq out(s.frames(), s.bins());
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t f = 0; f < s.bins(); ++f)
      out(t, f) = (s(t, f) - y(t, f)) + (params.sigma_min_at(f) - params.sigma_y_at(f)) * eps(t, f);
  return out;
}

double jfm_loss(const FrameSeq& prediction, const FrameSeq& target) {
  require_same(prediction, target, "jfm_loss");
  if (prediction.empty()) throw ShapeError("jfm_loss: empty input");
  auto p = prediction.data(), q = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::norm(p[i] - q[i]);
  return acc / (2.0 * static_cast<double>(p.size()));
}

FrameSeq jfm_loss_grad(const FrameSeq& prediction, const FrameSeq& target) {
  require_same(prediction, target, "jfm_loss_grad");
  FrameSeq g(prediction.frames(), prediction.bins());
  auto p = prediction.data(), q = target.data();
  auto gd = g.data();
  const double scale = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) gd[i] = scale * (p[i] - q[i]);
  return g;
}

double predictor_loss(std::span<const double> z, std::span<const double> s) {
  return predictor_loss_impl<false>(z, s, nullptr);
}

LossAndGrad predictor_loss_grad(std::span<const double> z, std::span<const double> s) {
  LossAndGrad out;
  out.loss = predictor_loss_impl<true>(z, s, &out.grad);
  return out;
}

double mr_logspec_mse(std::span<const double> x, std::span<const double> s) {
  return logspec_impl<false>(x, s, nullptr);
}

LossAndGrad mr_logspec_mse_grad(std::span<const double> x, std::span<const double> s) {
  LossAndGrad out;
  out.loss = logspec_impl<true>(x, s, &out.grad);
  return out;
}

std::vector<double> bwe_sigma_heuristic(std::span<const std::pair<FrameSeq, FrameSeq>> pairs, double floor) {
  if (pairs.empty()) throw ConfigError("bwe_sigma_heuristic: no calibration pairs");
  const std::size_t bins = pairs.front().first.bins();
  std::vector<double> sumsq(bins, 0.0);
  std::size_t count = 0;
  for (const auto& [s, y] : pairs) {
    require_same(s, y, "bwe_sigma_heuristic");
    if (s.bins() != bins) throw ShapeError("bwe_sigma_heuristic: pairs differ in bin count");
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t f = 0; f < bins; ++f) sumsq[f] += std::norm(s(t, f) - y(t, f));
    count += s.frames();
  }
  std::vector<double> out(bins, floor);
  if (count == 0) return out;
  for (std::size_t f = 0; f < bins; ++f) out[f] = std::max(floor, std::sqrt(sumsq[f] / static_cast<double>(count)));
  return out;
}

FlowPathParams bwe_flow_params(std::span<const std::pair<FrameSeq, FrameSeq>> pairs, double floor) {
  FlowPathParams p;
  p.sigma_y = bwe_sigma_heuristic(pairs, floor);
  p.sigma_min = p.sigma_y;
  for (auto& v : p.sigma_min) v *= 0.001;
  return p;
}

}  // namespace sfm::flow
