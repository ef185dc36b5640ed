#include "sfm/dsp/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "sfm/error.hpp"

namespace sfm::dsp {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }
fftw_complex* as_fftw(const cplx* p) { return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p)); }

}  // namespace

struct Fft::Plans {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
  }
};

Fft::Fft(std::size_t n) : n_(n), plans_(std::make_unique<Plans>()) {
  if (n == 0) throw ConfigError("Fft: size must be positive");
  auto* a = fftw_alloc_complex(n);
  auto* b = fftw_alloc_complex(n);
  {
    std::lock_guard lock(planner_mutex());
    const int ni = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    plans_->fwd = fftw_plan_dft_1d(ni, a, b, FFTW_FORWARD, flags);
    plans_->inv = fftw_plan_dft_1d(ni, a, b, FFTW_BACKWARD, flags);
  }
  fftw_free(a);
  fftw_free(b);
  if (!plans_->fwd || !plans_->inv) throw ConfigError("Fft: FFTW plan creation failed");
}

Fft::~Fft() = default;
Fft::Fft(Fft&&) noexcept = default;
Fft& Fft::operator=(Fft&&) noexcept = default;

void Fft::forward(std::span<const cplx> in, std::span<cplx> out) {
  if (in.size() != n_ || out.size() != n_) throw ShapeError("Fft::forward: size mismatch");
  fftw_execute_dft(plans_->fwd, as_fftw(in.data()), as_fftw(out.data()));
}

void Fft::inverse(std::span<const cplx> in, std::span<cplx> out) {
  if (in.size() != n_ || out.size() != n_) throw ShapeError("Fft::inverse: size mismatch");
  fftw_execute_dft(plans_->inv, as_fftw(in.data()), as_fftw(out.data()));
}

}  // namespace sfm::dsp
