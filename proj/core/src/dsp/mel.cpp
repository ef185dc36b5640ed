#include "sfm/dsp/mel.hpp"

#include <algorithm>
#include <cmath>

#include "sfm/error.hpp"

namespace sfm::dsp {
namespace {

constexpr double kLinearStep = 200.0 / 3.0;  // Hz per mel below the break
constexpr double kBreakHz = 1000.0;
constexpr double kBreakMel = kBreakHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

}  // namespace

double hz_to_mel_slaney(double hz) {
  if (hz < kBreakHz) return hz / kLinearStep;
  return kBreakMel + std::log(hz / kBreakHz) / kLogStep;
}

double mel_to_hz_slaney(double mel) {
  if (mel < kBreakMel) return mel * kLinearStep;
  return kBreakHz * std::exp(kLogStep * (mel - kBreakMel));
}

MelConfig make_mel_config(int n_mels, int n_fft, int sample_rate, double fmin, double fmax) {
  if (n_mels < 1 || n_fft < 2 || sample_rate <= 0 || !(fmin >= 0.0) || !(fmax > fmin) ||
      fmax > sample_rate / 2.0 + 1e-9)
    throw ConfigError("make_mel_config: invalid mel parameters");
  MelConfig cfg;
  cfg.n_mels = n_mels;
  cfg.n_fft = n_fft;
  cfg.sample_rate = sample_rate;
  cfg.fmin = fmin;
  cfg.fmax = fmax;

  const int bins = cfg.stft_bins();
  const double mlo = hz_to_mel_slaney(fmin), mhi = hz_to_mel_slaney(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz_slaney(mlo + (mhi - mlo) * i / (n_mels + 1));

  cfg.mel = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      cfg.mel(m, k) = norm * std::max(0.0, std::min(up, down));
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cfg.mel, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = 1e-8 * (s.size() ? s(0) : 0.0);
  Eigen::VectorXd inv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) inv(i) = s(i) > cutoff ? 1.0 / s(i) : 0.0;
  cfg.pseudo_inverse = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return cfg;
}

std::vector<double> mel_project(std::span<const double> magnitude, const MelConfig& mel) {
  if (static_cast<Eigen::Index>(magnitude.size()) != mel.mel.cols())
    throw ShapeError("mel_project: expected " + std::to_string(mel.mel.cols()) + " bins, got " +
                     std::to_string(magnitude.size()));
  const Eigen::Map<const Eigen::VectorXd> x(magnitude.data(), static_cast<Eigen::Index>(magnitude.size()));
  const Eigen::VectorXd y = mel.pseudo_inverse * (mel.mel * x);
  std::vector<double> out(magnitude.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::abs(y(static_cast<Eigen::Index>(k)));
  return out;
}

FrameSeq mel_project_frames(const FrameSeq& full_frames, const MelConfig& mel) {
  FrameSeq out(full_frames.frames(), full_frames.bins());
  std::vector<double> mag(full_frames.bins());
  for (std::size_t t = 0; t < full_frames.frames(); ++t) {
    const auto in = full_frames.frame(t);
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(in[k]);
    const auto proj = mel_project(mag, mel);
    for (std::size_t k = 0; k < mag.size(); ++k) out(t, k) = cplx(proj[k], 0.0);
  }
  return out;
}

}  // namespace sfm::dsp
