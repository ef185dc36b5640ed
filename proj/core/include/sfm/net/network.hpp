#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sfm/net/program.hpp"
#include "sfm/frames.hpp"
#include "sfm/net/weights.hpp"

namespace sfm::net {

// Dense activation, layout [C][B][T][F] (channel planes of B sequences of T frames).
template <class T>
struct Activation {
  int channels = 0, batch = 1, frames = 0, bins = 0;
  std::vector<T> data;

  Activation() = default;
  Activation(int c, int b, int t, int f)
      : channels(c), batch(b), frames(t), bins(f), data(static_cast<std::size_t>(c) * b * t * f) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(batch) * frames * bins; }
  T* channel(int c) noexcept { return data.data() + c * plane(); }
  const T* channel(int c) const noexcept { return data.data() + c * plane(); }
  T& at(int c, int b, int t, int f) noexcept { return data[((c * std::size_t(batch) + b) * frames + t) * bins + f]; }
  const T& at(int c, int b, int t, int f) const noexcept {
    return data[((c * std::size_t(batch) + b) * frames + t) * bins + f];
  }
};

// Sinusoidal embedding: dim/2 sines then dim/2 cosines of omega_k * tau with
// omega_k log-spaced in [1, 1000].
template <class T>
void time_embed(double tau, std::span<T> out);
std::vector<double> time_embed(double tau, int dim);

// One collection of per-layer rolling buffers: for every layer that looks at
// past frames, the last (k_t - 1) * d_t input frames ([C][F] each) in a ring.
template <class T>
class StreamBuffers {
 public:
  struct Ring {
    int capacity = 0;    // frames
    int frame_size = 0;  // C * F
    int head = 0;        // next write position
    std::vector<T> data;

    // Frame `lag` steps in the past (1 = previous frame).
    const T* past(int lag) const noexcept {
      int idx = head - lag;
      if (idx < 0) idx += capacity;
      return data.data() + static_cast<std::size_t>(idx) * frame_size;
    }
    void push(const T* frame) noexcept {
      std::copy(frame, frame + frame_size, data.data() + static_cast<std::size_t>(head) * frame_size);
      if (++head == capacity) head = 0;
    }
  };

  void reset() noexcept {
    for (auto& r : rings) {
      std::fill(r.data.begin(), r.data.end(), T{});
      r.head = 0;
    }
  }
  // Number of layers holding a buffer.
  int buffered_layers() const noexcept {
    int n = 0;
    for (const auto& r : rings) n += r.capacity > 0;
    return n;
  }
  std::size_t floats() const noexcept {
    std::size_t n = 0;
    for (const auto& r : rings) n += r.data.size();
    return n;
  }

  std::vector<Ring> rings;  // indexed by layer; capacity 0 for unbuffered layers
};

// Preallocated per-frame working memory shared by all buffer collections of
// one stream (calls are sequential).
template <class T>
struct FrameScratch {
  std::vector<std::vector<T>> slots;  // [C][F] per slot
  std::vector<T> cols, mid, emb, shift;
};

// Gradients aligned with Network::parameters().
template <class T>
struct GradStore {
  std::vector<std::vector<T>> grads;
  void zero() {
    for (auto& g : grads) std::fill(g.begin(), g.end(), T{});
  }
};

template <class T>
struct ParamRef {
  std::string name;
  T* data = nullptr;
  std::size_t size = 0;
  bool trainable = true;
};

// Saved forward state for backpropagation.
template <class T>
struct Tape {
  std::vector<Activation<T>> slots;
  std::vector<std::vector<T>> norm_mean, norm_inv_std;  // per layer, per group
  std::vector<T> emb;                                   // [B][emb_dim]
  bool batch_stats = true;
};

// Executes a Program with weights converted to scalar type T.
template <class T>
class Network {
 public:
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Network(Program prog, const WeightStore& weights);

  const Program& program() const noexcept { return prog_; }
  int receptive_field() const { return prog_.receptive_field(); }
  int input_channels() const { return prog_.input_channels(); }
  int output_channels() const { return prog_.output_channels(); }
  int bins() const { return prog_.input_bins(); }
  bool time_conditioned() const noexcept { return prog_.time_conditioned; }

  // Offline causal evaluation of B sequences. `taus` holds one value shared by
  // the batch or one per sequence; it must be empty iff the net is unconditioned.
  Activation<T> forward(const Activation<T>& input, std::span<const double> taus = {}) const;

  StreamBuffers<T> make_buffers() const;
  FrameScratch<T> make_scratch() const;
  // One frame ([C_in][F] -> [C_out][F]) through one buffer collection; shifts
  // every ring by one frame. Does not allocate.
  void forward_frame(std::span<const T> in, double tau, StreamBuffers<T>& buffers, FrameScratch<T>& scratch,
                     std::span<T> out) const;

  // Training forward pass. With batch_stats the norms use batch moments and
  // update their running statistics with `momentum`.
  Activation<T> forward_train(const Activation<T>& input, std::span<const double> taus, Tape<T>& tape,
                              bool batch_stats = true, double momentum = 0.05);
  // Accumulates parameter gradients into `grads`; returns d loss / d input.
  Activation<T> backward(const Tape<T>& tape, const Activation<T>& grad_out, GradStore<T>& grads) const;

  std::vector<ParamRef<T>> parameters();
  GradStore<T> make_grads();
  WeightStore to_weights() const;

 private:
  struct Layer {
    RowMat w;        // conv: cout x (cin kt kf); dconv pointwise: cout x (cin J); inject: cout x emb
    RowMat dw;       // dconv depthwise: (cin J) x (kt kf)
    Vec bias;
    Vec gamma, beta, running_mean, running_var;
    Vec frozen_inv_std;                                 // 1 / sqrt(running_var + eps)
    std::vector<std::vector<std::pair<int, T>>> taps;  // resampling: per output bin
  };

  template <class Fetch>
  void im2col(const LayerSpec& l, int bins, int ncols, Fetch&& fetch, T* cols) const;
  void conv_apply(const LayerSpec& l, const Layer& p, const T* cols, int len, T* out, std::size_t out_stride,
                  T* mid) const;
  void norm_apply(const LayerSpec& l, const Layer& p, const T* in, T* out, int nframes, int bins,
                  const T* mean, const T* inv_std) const;

  Program prog_;
  std::vector<Layer> layers_;
  std::vector<int> last_use_;
  std::vector<int> param_base_;  // index of the first parameter of each layer

  Activation<T> run(const Activation<T>& input, std::span<const double> taus, Tape<T>* tape, bool batch_stats) const;
  void refresh_frozen();
};

extern template class Network<float>;
extern template class Network<double>;

// Packs complex frame sequences into an activation: channel 2k = Re(k-th
// sequence), 2k+1 = Im. All sequences share T and F; batch = 1.
template <class T>
Activation<T> pack_complex(std::span<const FrameSeq* const> seqs);
template <class T>
FrameSeq unpack_complex(const Activation<T>& act, int pair = 0, int batch_index = 0);

}  // namespace sfm::net
