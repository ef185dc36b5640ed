#pragma once

#include <span>
#include <vector>

#include "sfm/frames.hpp"

namespace sfm::dsp {

// Kaiser-windowed sinc low-pass prototype for integer factor f:
// 64 taps per polyphase branch (64*f + 1 total), beta = 8, unit DC gain.
// The cutoff is placed so the stop band starts at the decimated Nyquist rate.
std::vector<double> resampler_kernel(int factor);

// Zero-phase anti-aliased decimation by `factor`.
Signal downsample(std::span<const double> x, int factor);
// Zero-phase interpolation by `factor`, output truncated to n_out samples.
Signal upsample(std::span<const double> x, int factor, std::size_t n_out);

}  // namespace sfm::dsp
