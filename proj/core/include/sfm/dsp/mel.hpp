#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sfm/frames.hpp"

namespace sfm::dsp {

struct MelConfig {
  int n_mels = 80;
  int n_fft = 512;
  int sample_rate = 16000;
  double fmin = 0.0;
  double fmax = 8000.0;
  Eigen::MatrixXd mel;            // n_mels x (n_fft/2 + 1), nonnegative
  Eigen::MatrixXd pseudo_inverse; // (n_fft/2 + 1) x n_mels

  int stft_bins() const noexcept { return n_fft / 2 + 1; }
};

// Slaney-style triangular filterbank with area normalization; the
// pseudoinverse zeroes singular values below 1e-8 * sigma_max.
MelConfig make_mel_config(int n_mels = 80, int n_fft = 512, int sample_rate = 16000, double fmin = 0.0,
                          double fmax = 8000.0);

double hz_to_mel_slaney(double hz);
double mel_to_hz_slaney(double mel);

// |M^+ (M mag)|, length stft_bins().
std::vector<double> mel_project(std::span<const double> magnitude, const MelConfig& mel);

// Frame-wise |M^+ (M |X|)| + 0j on full-band (W/2+1) uncompressed frames.
FrameSeq mel_project_frames(const FrameSeq& full_frames, const MelConfig& mel);

}  // namespace sfm::dsp
