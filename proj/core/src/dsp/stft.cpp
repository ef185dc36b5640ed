#include "sfm/dsp/stft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfm/error.hpp"

namespace sfm::dsp {

void StftConfig::validate() const {
  if (window_len <= 0 || window_len % 2 != 0)
    throw ConfigError("StftConfig: window_len must be positive and even, got " + std::to_string(window_len));
  if (hop_len <= 0 || hop_len > window_len)
    throw ConfigError("StftConfig: hop_len must satisfy 0 < hop_len <= window_len");
  if (sample_rate <= 0) throw ConfigError("StftConfig: sample_rate must be positive");
  if (!(compress_alpha > 0.0)) throw ConfigError("StftConfig: compress_alpha must be positive");
}

std::vector<double> hann(int window_len) {
  std::vector<double> w(static_cast<std::size_t>(window_len));
  for (int n = 0; n < window_len; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / window_len);
  return w;
}

std::vector<double> sqrt_hann(int window_len) {
  auto w = hann(window_len);
  for (auto& v : w) v = std::sqrt(v);
  return w;
}

std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg) {
  if (n_samples == 0) return 0;
  const auto H = static_cast<std::size_t>(cfg.hop_len);
  return (n_samples + static_cast<std::size_t>(cfg.left_pad()) + H - 1) / H;
}

cplx compress(cplx x, double alpha, bool probe_mode) {
  if (!probe_mode && x == cplx{}) return {};
  const double mag = std::abs(x);
  return std::polar(std::pow(mag, alpha), std::arg(x));
}

cplx decompress(cplx x, double alpha, bool probe_mode) { return compress(x, 1.0 / alpha, probe_mode); }

namespace {

// Periodic squared-window overlap sum, one period of length H.
std::vector<double> envelope(const std::vector<double>& w, int hop) {
  std::vector<double> env(static_cast<std::size_t>(hop), 0.0);
  for (std::size_t n = 0; n < w.size(); ++n) env[n % hop] += w[n] * w[n];
  return env;
}

// Orthonormal real-input DFT of one windowed frame, first W/2+1 bins.
void analyze_frame(std::span<const double> samples, const std::vector<double>& w, Fft& fft,
                   std::vector<cplx>& in, std::vector<cplx>& out, std::span<cplx> bins) {
  const std::size_t W = w.size();
  for (std::size_t n = 0; n < W; ++n) in[n] = cplx(samples[n] * w[n], 0.0);
  fft.forward(in, out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(W));
  for (std::size_t k = 0; k < bins.size(); ++k) bins[k] = out[k] * scale;
}

// Inverse orthonormal DFT of W/2+1 Hermitian bins, returning W real samples.
void synthesize_frame(std::span<const cplx> bins, Fft& fft, std::vector<cplx>& in, std::vector<cplx>& out,
                      std::span<double> samples) {
  const std::size_t W = in.size();
  const std::size_t half = W / 2;
  in[0] = cplx(bins[0].real(), 0.0);
  for (std::size_t k = 1; k < half; ++k) {
    in[k] = bins[k];
    in[W - k] = std::conj(bins[k]);
  }
  in[half] = cplx(bins[half].real(), 0.0);
  fft.inverse(in, out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(W));
  for (std::size_t n = 0; n < W; ++n) samples[n] = out[n].real() * scale;
}

}  // namespace

FrameSeq stft_raw(std::span<const double> audio, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t T = frame_count(audio.size(), cfg);
  const std::size_t W = cfg.window_len, H = cfg.hop_len, pad = cfg.left_pad();
  FrameSeq frames(T, cfg.full_bins());
  if (T == 0) return frames;
  const auto w = sqrt_hann(cfg.window_len);
  Fft fft(W);
  std::vector<cplx> in(W), out(W);
  std::vector<double> chunk(W);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < W; ++n) {
      const std::size_t p = t * H + n;  // padded coordinate
      chunk[n] = (p >= pad && p - pad < audio.size()) ? audio[p - pad] : 0.0;
    }
    analyze_frame(chunk, w, fft, in, out, frames.frame(t));
  }
  return frames;
}

Signal istft_raw(const FrameSeq& frames, const StftConfig& cfg, std::size_t n_samples) {
  cfg.validate();
  if (!frames.empty() && frames.bins() != static_cast<std::size_t>(cfg.full_bins()))
    throw ShapeError("istft_raw: expected " + std::to_string(cfg.full_bins()) + " bins per frame, got " +
                     std::to_string(frames.bins()));
  const std::size_t W = cfg.window_len, H = cfg.hop_len, pad = cfg.left_pad();
  const std::size_t T = frames.frames();
  Signal out(n_samples, 0.0);
  if (T == 0) return out;
  const auto w = sqrt_hann(cfg.window_len);
  const auto env = envelope(w, cfg.hop_len);
  Fft fft(W);
  std::vector<cplx> in(W), tmp(W);
  std::vector<double> frame(W);
  for (std::size_t t = 0; t < T; ++t) {
    synthesize_frame(frames.frame(t), fft, in, tmp, frame);
    for (std::size_t n = 0; n < W; ++n) {
      const std::size_t p = t * H + n;
      if (p < pad || p - pad >= n_samples) continue;
      out[p - pad] += w[n] * frame[n];
    }
  }
  for (std::size_t i = 0; i < n_samples; ++i) out[i] /= env[(i + pad) % H];
  return out;
}

void compress_frames(FrameSeq& frames, const StftConfig& cfg) {
  for (auto& x : frames.data()) x = compress(x, cfg.compress_alpha, cfg.probe_mode);
}

FrameSeq drop_nyquist(const FrameSeq& full) {
  if (full.bins() < 2) throw ShapeError("drop_nyquist: frames too small");
  FrameSeq out(full.frames(), full.bins() - 1);
  for (std::size_t t = 0; t < full.frames(); ++t)
    std::copy_n(full.frame(t).begin(), out.bins(), out.frame(t).begin());
  return out;
}

FrameSeq append_zero_nyquist(const FrameSeq& frames) {
  FrameSeq out(frames.frames(), frames.bins() + 1);
  for (std::size_t t = 0; t < frames.frames(); ++t)
    std::copy(frames.frame(t).begin(), frames.frame(t).end(), out.frame(t).begin());
  return out;
}

FrameSeq stft_analyze(std::span<const double> audio, const StftConfig& cfg) {
  auto full = stft_raw(audio, cfg);
  compress_frames(full, cfg);
  if (cfg.keep_nyquist || full.empty()) {
    if (full.empty()) return FrameSeq(0, cfg.bins());
    return full;
  }
  return drop_nyquist(full);
}

Signal istft_synthesize(const FrameSeq& frames, const StftConfig& cfg, std::size_t n_samples) {
  cfg.validate();
  if (!frames.empty() && frames.bins() != static_cast<std::size_t>(cfg.bins()))
    throw ShapeError("istft_synthesize: expected " + std::to_string(cfg.bins()) + " bins per frame, got " +
                     std::to_string(frames.bins()));
  if (n_samples == 0 && frames.frames() > 0)
    n_samples = frames.frames() * cfg.hop_len - static_cast<std::size_t>(cfg.left_pad());
  FrameSeq full = cfg.keep_nyquist ? frames : append_zero_nyquist(frames);
  for (auto& x : full.data()) x = decompress(x, cfg.compress_alpha, cfg.probe_mode);
  return istft_raw(full, cfg, n_samples);
}

FrameSeq istft_synthesize_backward(const FrameSeq& frames, const StftConfig& cfg,
                                   std::span<const double> grad_audio) {
  cfg.validate();
  const std::size_t W = cfg.window_len, H = cfg.hop_len, pad = cfg.left_pad();
  const std::size_t T = frames.frames();
  const std::size_t F = frames.bins();
  const std::size_t half = W / 2;
  const auto w = sqrt_hann(cfg.window_len);
  const auto env = envelope(w, cfg.hop_len);
  Fft fft(W);
  std::vector<cplx> in(W), out(W);
  FrameSeq grad(T, F);
  const double scale = 1.0 / std::sqrt(static_cast<double>(W));
  const double p = 1.0 / cfg.compress_alpha;
  for (std::size_t t = 0; t < T; ++t) {
    // Adjoint of overlap-add and envelope normalization.
    for (std::size_t n = 0; n < W; ++n) {
      const std::size_t q = t * H + n;
      double g = 0.0;
      if (q >= pad && q - pad < grad_audio.size()) g = grad_audio[q - pad] / env[q % H] * w[n];
      in[n] = cplx(g, 0.0);
    }
    fft.forward(in, out);
    for (std::size_t k = 0; k < F; ++k) {
      // Adjoint of the Hermitian-symmetric real inverse DFT.
      const double c = (k == 0 || k == half) ? 1.0 : 2.0;
      cplx gd = c * scale * out[k];
      if (k == 0 || k == half) gd = cplx(gd.real(), 0.0);
      // Adjoint of decompression x -> |x|^(p-1) x, as a 2x2 real Jacobian.
      const cplx x = frames(t, k);
      const double r = std::abs(x);
      if (r == 0.0) {
        grad(t, k) = (p == 1.0) ? gd : cplx{};
        continue;
      }
      const cplx u = x / r;
      const double radial = gd.real() * u.real() + gd.imag() * u.imag();
      grad(t, k) = std::pow(r, p - 1.0) * (gd + (p - 1.0) * radial * u);
    }
  }
  return grad;
}

StftAnalyzer::StftAnalyzer(const StftConfig& cfg)
    : cfg_(cfg),
      window_(sqrt_hann(cfg.window_len)),
      history_(static_cast<std::size_t>(cfg.window_len), 0.0),
      fft_in_(static_cast<std::size_t>(cfg.window_len)),
      fft_out_(static_cast<std::size_t>(cfg.window_len)),
      fft_(static_cast<std::size_t>(cfg.window_len)) {
  cfg_.validate();
}

void StftAnalyzer::reset() { std::fill(history_.begin(), history_.end(), 0.0); }

void StftAnalyzer::push(std::span<const double> hop, std::span<cplx> frame_out) {
  const std::size_t W = cfg_.window_len, H = cfg_.hop_len;
  if (hop.size() != H) throw ShapeError("StftAnalyzer::push: expected exactly hop_len samples");
  if (frame_out.size() != static_cast<std::size_t>(cfg_.bins()))
    throw ShapeError("StftAnalyzer::push: output frame has wrong bin count");
  std::copy(history_.begin() + H, history_.end(), history_.begin());
  std::copy(hop.begin(), hop.end(), history_.begin() + (W - H));
  for (std::size_t n = 0; n < W; ++n) fft_in_[n] = cplx(history_[n] * window_[n], 0.0);
  fft_.forward(fft_in_, fft_out_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(W));
  for (std::size_t k = 0; k < frame_out.size(); ++k)
    frame_out[k] = compress(fft_out_[k] * scale, cfg_.compress_alpha, cfg_.probe_mode);
}

StftSynthesizer::StftSynthesizer(const StftConfig& cfg)
    : cfg_(cfg),
      window_(sqrt_hann(cfg.window_len)),
      envelope_(envelope(window_, cfg.hop_len)),
      accum_(static_cast<std::size_t>(cfg.window_len), 0.0),
      fft_in_(static_cast<std::size_t>(cfg.window_len)),
      fft_out_(static_cast<std::size_t>(cfg.window_len)),
      fft_(static_cast<std::size_t>(cfg.window_len)) {
  cfg_.validate();
}

void StftSynthesizer::reset() { std::fill(accum_.begin(), accum_.end(), 0.0); }

void StftSynthesizer::push(std::span<const cplx> frame, std::span<double> hop_out) {
  const std::size_t W = cfg_.window_len, H = cfg_.hop_len, half = W / 2;
  if (frame.size() != static_cast<std::size_t>(cfg_.bins()))
    throw ShapeError("StftSynthesizer::push: frame has wrong bin count");
  if (hop_out.size() != H) throw ShapeError("StftSynthesizer::push: output must hold hop_len samples");
  const double a = cfg_.compress_alpha;
  const bool probe = cfg_.probe_mode;
  fft_in_[0] = cplx(decompress(frame[0], a, probe).real(), 0.0);
  for (std::size_t k = 1; k < half; ++k) {
    const cplx v = decompress(frame[k], a, probe);
    fft_in_[k] = v;
    fft_in_[W - k] = std::conj(v);
  }
  fft_in_[half] = cfg_.keep_nyquist ? cplx(decompress(frame[half], a, probe).real(), 0.0) : cplx{};
  fft_.inverse(fft_in_, fft_out_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(W));
  for (std::size_t n = 0; n < W; ++n) accum_[n] += window_[n] * fft_out_[n].real() * scale;
  // Samples [0, H) of the accumulator are complete; the window start is
  // always a multiple of H, so the envelope phase is n.
  for (std::size_t n = 0; n < H; ++n) hop_out[n] = accum_[n] / envelope_[n];
  std::copy(accum_.begin() + H, accum_.end(), accum_.begin());
  std::fill(accum_.end() - H, accum_.end(), 0.0);
}

}  // namespace sfm::dsp
