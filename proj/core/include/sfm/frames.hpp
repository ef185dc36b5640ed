#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sfm {

using cplx = std::complex<double>;
using Signal = std::vector<double>;

// One complex STFT frame after compression and Nyquist drop.
struct SpectroFrame {
  std::int64_t frame_index = 0;
  std::vector<cplx> bins;
};

// Contiguous T x F complex frame sequence, frame-major.
class FrameSeq {
 public:
  FrameSeq() = default;
  FrameSeq(std::size_t frames, std::size_t bins) : frames_(frames), bins_(bins), data_(frames * bins) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t bins() const noexcept { return bins_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<cplx> frame(std::size_t t) noexcept { return {data_.data() + t * bins_, bins_}; }
  std::span<const cplx> frame(std::size_t t) const noexcept { return {data_.data() + t * bins_, bins_}; }

  cplx& operator()(std::size_t t, std::size_t f) noexcept { return data_[t * bins_ + f]; }
  const cplx& operator()(std::size_t t, std::size_t f) const noexcept { return data_[t * bins_ + f]; }

  std::span<cplx> data() noexcept { return data_; }
  std::span<const cplx> data() const noexcept { return data_; }

  bool same_shape(const FrameSeq& o) const noexcept { return frames_ == o.frames_ && bins_ == o.bins_; }

  friend bool operator==(const FrameSeq&, const FrameSeq&) = default;

 private:
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  std::vector<cplx> data_;
};

}  // namespace sfm
