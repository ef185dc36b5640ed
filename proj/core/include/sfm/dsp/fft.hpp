#pragma once

#include <cstddef>
#include <memory>
#include <span>

#include "sfm/frames.hpp"

namespace sfm::dsp {

// Complex-to-complex double FFT of a fixed size, backed by FFTW.
// Unnormalized in both directions. Plans are created under a global lock;
// execution on a single Fft object is not reentrant, distinct objects are
// independent.
class Fft {
 public:
  explicit Fft(std::size_t n);
  ~Fft();
  Fft(Fft&&) noexcept;
  Fft& operator=(Fft&&) noexcept;
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  std::size_t size() const noexcept { return n_; }

  // out[k] = sum_n in[n] exp(-2 pi i k n / N)
  void forward(std::span<const cplx> in, std::span<cplx> out);
  // out[n] = sum_k in[k] exp(+2 pi i k n / N)
  void inverse(std::span<const cplx> in, std::span<cplx> out);

 private:
  struct Plans;
  std::size_t n_ = 0;
  std::unique_ptr<Plans> plans_;
};

}  // namespace sfm::dsp
