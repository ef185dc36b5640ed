#include "sfm/dsp/resample.hpp"

#include <cmath>
#include <numbers>

#include "sfm/error.hpp"

namespace sfm::dsp {
namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kBeta = 8.0;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Zero-phase FIR: y[i] = sum_k h[k] x[i - (k - center)], zero outside x.
double tap_sum(std::span<const double> x, const std::vector<double>& h, long i) {
  const long center = static_cast<long>(h.size() / 2);
  const long n = static_cast<long>(x.size());
  double acc = 0.0;
  for (long k = 0; k < static_cast<long>(h.size()); ++k) {
    const long j = i - (k - center);
    if (j >= 0 && j < n) acc += h[k] * x[j];
  }
  return acc;
}

}  // namespace

std::vector<double> resampler_kernel(int factor) {
  if (factor < 2) throw ConfigError("resampler_kernel: factor must be >= 2");
  const int len = kTapsPerPhase * factor + 1;
  const int order = len - 1;
  // Kaiser design relations: attenuation from beta, transition width from order.
  const double atten_db = kBeta / 0.1102 + 8.7;
  const double transition = (atten_db - 8.0) / (2.285 * order) / (2.0 * std::numbers::pi);  // cycles/sample
  const double cutoff = 0.5 / factor - transition / 2.0;
  const double i0b = std::cyl_bessel_i(0.0, kBeta);
  std::vector<double> h(static_cast<std::size_t>(len));
  double sum = 0.0;
  for (int n = 0; n < len; ++n) {
    const double r = 2.0 * n / order - 1.0;
    const double w = std::cyl_bessel_i(0.0, kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[n] = 2.0 * cutoff * sinc(2.0 * cutoff * (n - order / 2)) * w;
    sum += h[n];
  }
  for (auto& v : h) v /= sum;
  return h;
}

Signal downsample(std::span<const double> x, int factor) {
  const auto h = resampler_kernel(factor);
  Signal y((x.size() + factor - 1) / factor);
  for (std::size_t m = 0; m < y.size(); ++m) y[m] = tap_sum(x, h, static_cast<long>(m * factor));
  return y;
}

Signal upsample(std::span<const double> x, int factor, std::size_t n_out) {
  const auto h = resampler_kernel(factor);
  Signal stuffed(x.size() * factor, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) stuffed[i * factor] = factor * x[i];
  Signal y(n_out, 0.0);
  for (std::size_t i = 0; i < n_out; ++i) y[i] = tap_sum(stuffed, h, static_cast<long>(i));
  return y;
}

}  // namespace sfm::dsp
