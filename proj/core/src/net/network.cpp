#include "sfm/net/network.hpp"

#include <algorithm>
#include <cmath>

#include "sfm/error.hpp"

namespace sfm::net {
namespace {

constexpr double kNormEps = 1e-5;
// Upper bound on im2col buffer elements for offline evaluation.
constexpr std::size_t kMaxColElements = std::size_t{1} << 22;

template <class T>
using ConstRowMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                               Eigen::OuterStride<>>;
template <class T>
using RowMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0, Eigen::OuterStride<>>;

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// (source bin, weight) lists for 2x FIR resampling with edge replication.
template <class T>
std::vector<std::vector<std::pair<int, T>>> resample_taps(const std::vector<double>& fir, int in_bins, bool down) {
  double sum = 0.0;
  for (double v : fir) sum += v;
  const int K = static_cast<int>(fir.size());
  const int off = K / 2 - 1;
  auto clamp = [in_bins](int i) { return std::clamp(i, 0, in_bins - 1); };
  std::vector<std::vector<std::pair<int, T>>> taps;
  if (down) {
    taps.resize(static_cast<std::size_t>(in_bins / 2));
    for (int i = 0; i < in_bins / 2; ++i)
      for (int k = 0; k < K; ++k) taps[i].emplace_back(clamp(2 * i + k - off), static_cast<T>(fir[k] / sum));
  } else {
    taps.resize(static_cast<std::size_t>(in_bins * 2));
    for (int n = 0; n < in_bins * 2; ++n)
      for (int k = 0; k < K; ++k) {
        const int m = n + off - k;  // index into the zero-stuffed sequence
        if (((m % 2) + 2) % 2 != 0) continue;
        const int src = m >= 0 ? m / 2 : -((-m + 1) / 2);
        taps[n].emplace_back(clamp(src), static_cast<T>(2.0 * fir[k] / sum));
      }
  }
  return taps;
}

template <class T>
void load_matrix(const WeightStore& w, const std::string& name, int rows, int cols,
                 Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m) {
  const auto& t = w.at(name);
  m.resize(rows, cols);
  for (int i = 0; i < rows * cols; ++i) m.data()[i] = static_cast<T>(t.data[static_cast<std::size_t>(i)]);
}

template <class T>
void load_vector(const WeightStore& w, const std::string& name, Eigen::Matrix<T, Eigen::Dynamic, 1>& v) {
  const auto& t = w.at(name);
  v.resize(static_cast<Eigen::Index>(t.data.size()));
  for (std::size_t i = 0; i < t.data.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<T>(t.data[i]);
}

int norm_group(const LayerSpec& l, int c, int f, int bins) {
  const int cgs = l.cin / l.channel_groups;
  const int fgs = bins / l.freq_groups;
  return (c / cgs) * l.freq_groups + f / fgs;
}

}  // namespace

template <class T>
void time_embed(double tau, std::span<T> out) {
  const std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double omega = half > 1 ? std::pow(1000.0, static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
    out[k] = static_cast<T>(std::sin(omega * tau));
    out[half + k] = static_cast<T>(std::cos(omega * tau));
  }
}

std::vector<double> time_embed(double tau, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim));
  time_embed<double>(tau, e);
  return e;
}

template void time_embed<float>(double, std::span<float>);
template void time_embed<double>(double, std::span<double>);

template <class T>
Network<T>::Network(Program prog, const WeightStore& weights) : prog_(std::move(prog)) {
  prog_.validate();
  check_weights(prog_, weights);
  layers_.resize(prog_.layers.size());
  param_base_.resize(prog_.layers.size());
  int pidx = 0;
  for (std::size_t i = 0; i < prog_.layers.size(); ++i) {
    const auto& l = prog_.layers[i];
    auto& p = layers_[i];
    param_base_[i] = pidx;
    switch (l.kind) {
      case OpKind::Conv:
        load_matrix(weights, l.name + ".weight", l.cout, l.cin * l.kt * l.kf, p.w);
        load_vector(weights, l.name + ".bias", p.bias);
        pidx += 2;
        break;
      case OpKind::DConv:
        load_matrix(weights, l.name + ".depthwise", l.cin * l.rank, l.kt * l.kf, p.dw);
        load_matrix(weights, l.name + ".pointwise", l.cout, l.cin * l.rank, p.w);
        load_vector(weights, l.name + ".bias", p.bias);
        pidx += 3;
        break;
      case OpKind::Norm:
        load_vector(weights, l.name + ".gamma", p.gamma);
        load_vector(weights, l.name + ".beta", p.beta);
        load_vector(weights, l.name + ".running_mean", p.running_mean);
        load_vector(weights, l.name + ".running_var", p.running_var);
        pidx += 4;
        break;
      case OpKind::Inject:
        load_matrix(weights, l.name + ".weight", l.cout, prog_.emb_dim, p.w);
        load_vector(weights, l.name + ".bias", p.bias);
        pidx += 2;
        break;
      case OpKind::FreqDown:
      case OpKind::FreqUp:
        p.taps = resample_taps<T>(prog_.fir, prog_.slots[l.in].bins, l.kind == OpKind::FreqDown);
        break;
      default:
        break;
    }
  }
  refresh_frozen();
  last_use_.assign(prog_.slots.size(), -1);
  for (std::size_t i = 0; i < prog_.layers.size(); ++i) {
    last_use_[prog_.layers[i].in] = static_cast<int>(i);
    if (prog_.layers[i].in2 >= 0) last_use_[prog_.layers[i].in2] = static_cast<int>(i);
  }
}

template <class T>
void Network<T>::refresh_frozen() {
  for (std::size_t i = 0; i < prog_.layers.size(); ++i) {
    if (prog_.layers[i].kind != OpKind::Norm) continue;
    auto& p = layers_[i];
    p.frozen_inv_std.resize(p.running_var.size());
    for (Eigen::Index g = 0; g < p.running_var.size(); ++g)
      p.frozen_inv_std(g) = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.running_var(g)) + kNormEps));
  }
}

template <class T>
template <class Fetch>
void Network<T>::im2col(const LayerSpec& l, int bins, int ncols, Fetch&& fetch, T* cols) const {
  const int pad = (l.kf - 1) / 2;
  const std::size_t row_len = static_cast<std::size_t>(ncols) * bins;
  for (int ci = 0; ci < l.cin; ++ci)
    for (int j = 0; j < l.kt; ++j) {
      const int lag = (l.kt - 1 - j) * l.dt;
      for (int q = 0; q < l.kf; ++q) {
        T* row = cols + static_cast<std::size_t>((ci * l.kt + j) * l.kf + q) * row_len;
        const int shift = q - pad;
        const int f0 = std::max(0, -shift), f1 = std::min(bins, bins - shift);
        for (int n = 0; n < ncols; ++n) {
          T* dst = row + static_cast<std::size_t>(n) * bins;
          const T* src = fetch(ci, lag, n);
          if (!src) {
            std::fill(dst, dst + bins, T{});
            continue;
          }
          for (int f = 0; f < f0; ++f) dst[f] = T{};
          for (int f = f0; f < f1; ++f) dst[f] = src[f + shift];
          for (int f = std::max(f1, f0); f < bins; ++f) dst[f] = T{};
        }
      }
    }
}

template <class T>
void Network<T>::conv_apply(const LayerSpec& l, const Layer& p, const T* cols, int len, T* out,
                            std::size_t out_stride, T* mid) const {
  const int kk = l.kt * l.kf;
  const int K = l.cin * kk;
  ConstRowMap<T> C(cols, K, len, Eigen::OuterStride<>(len));
  RowMap<T> Y(out, l.cout, len, Eigen::OuterStride<>(static_cast<Eigen::Index>(out_stride)));
  if (l.kind == OpKind::Conv) {
    Y.noalias() = p.w * C;
  } else {
    const int J = l.rank;
    RowMap<T> M(mid, l.cin * J, len, Eigen::OuterStride<>(len));
    for (int ci = 0; ci < l.cin; ++ci)
      M.middleRows(ci * J, J).noalias() = p.dw.middleRows(ci * J, J) * C.middleRows(ci * kk, kk);
    Y.noalias() = p.w * M;
  }
  Y.colwise() += p.bias;
}

template <class T>
void Network<T>::norm_apply(const LayerSpec& l, const Layer& p, const T* in, T* out, int nframes, int bins,
                            const T* mean, const T* inv_std) const {
  const std::size_t plane = static_cast<std::size_t>(nframes) * bins;
  for (int c = 0; c < l.cin; ++c) {
    const T g = p.gamma(c), b = p.beta(c);
    const T* x = in + c * plane;
    T* y = out + c * plane;
    for (int n = 0; n < nframes; ++n)
      for (int f = 0; f < bins; ++f) {
        const int grp = norm_group(l, c, f, bins);
        const std::size_t i = static_cast<std::size_t>(n) * bins + f;
        y[i] = (x[i] - mean[grp]) * inv_std[grp] * g + b;
      }
  }
}

template <class T>
Activation<T> Network<T>::run(const Activation<T>& input, std::span<const double> taus, Tape<T>* tape,
                              bool batch_stats) const {
  if (input.channels != input_channels() || input.bins != bins())
    throw ShapeError("network: input is " + std::to_string(input.channels) + "x" + std::to_string(input.bins) +
                     " (channels x bins), expected " + std::to_string(input_channels()) + "x" +
                     std::to_string(bins()));
  if (input.frames < 1 || input.batch < 1) throw ShapeError("network: empty input");
  const int B = input.batch, T_ = input.frames, N = B * T_;
  if (prog_.time_conditioned) {
    if (taus.size() != 1 && taus.size() != static_cast<std::size_t>(B))
      throw ConfigError("network: time-conditioned net needs one tau or one per sequence");
  } else if (!taus.empty()) {
    throw ConfigError("network: this net has no time conditioning but tau was given");
  }

  std::vector<T> emb;
  if (prog_.time_conditioned) {
    emb.resize(static_cast<std::size_t>(B) * prog_.emb_dim);
    for (int b = 0; b < B; ++b)
      time_embed<T>(taus[taus.size() == 1 ? 0 : b],
                    std::span<T>(emb.data() + static_cast<std::size_t>(b) * prog_.emb_dim, prog_.emb_dim));
  }
  if (tape) {
    tape->slots.assign(prog_.slots.size(), {});
    tape->norm_mean.assign(prog_.layers.size(), {});
    tape->norm_inv_std.assign(prog_.layers.size(), {});
    tape->emb = emb;
    tape->batch_stats = batch_stats;
  }

  std::vector<Activation<T>> acts(prog_.slots.size());
  acts[prog_.input_slot] = input;
  std::vector<T> cols, mid;
  for (std::size_t li = 0; li < prog_.layers.size(); ++li) {
    const auto& l = prog_.layers[li];
    const auto& p = layers_[li];
    const Activation<T>& X = acts[l.in];
    const int F = X.bins, Fo = prog_.slots[l.out].bins;
    Activation<T> Y(l.cout, B, T_, Fo);
    const std::size_t plane = X.plane();
    switch (l.kind) {
      case OpKind::Conv:
      case OpKind::DConv: {
        const std::size_t K = static_cast<std::size_t>(l.cin) * l.kt * l.kf;
        const int chunk = static_cast<int>(std::max<std::size_t>(1, kMaxColElements / (K * F)));
        for (int n0 = 0; n0 < N; n0 += chunk) {
          const int nc = std::min(chunk, N - n0);
          cols.resize(K * nc * F);
          if (l.kind == OpKind::DConv) mid.resize(static_cast<std::size_t>(l.cin) * l.rank * nc * F);
          auto fetch = [&](int ci, int lag, int n) -> const T* {
            const int g = n0 + n, b = g / T_, t = g % T_ - lag;
            if (t < 0) return nullptr;
            return X.channel(ci) + (static_cast<std::size_t>(b) * T_ + t) * F;
          };
          im2col(l, F, nc, fetch, cols.data());
          conv_apply(l, p, cols.data(), nc * F, Y.data.data() + static_cast<std::size_t>(n0) * F, Y.plane(),
                     mid.data());
        }
        break;
      }
      case OpKind::SiLU:
        for (std::size_t i = 0; i < X.data.size(); ++i) Y.data[i] = X.data[i] * sigmoid(X.data[i]);
        break;
      case OpKind::Norm: {
        const int G = l.channel_groups * l.freq_groups;
        if (batch_stats) {
          std::vector<double> sum(G, 0.0), sq(G, 0.0);
          std::vector<std::size_t> cnt(G, 0);
          for (int c = 0; c < l.cin; ++c)
            for (int n = 0; n < N; ++n)
              for (int f = 0; f < F; ++f) {
                const int g = norm_group(l, c, f, F);
                const double v = X.channel(c)[static_cast<std::size_t>(n) * F + f];
                sum[g] += v;
                sq[g] += v * v;
                ++cnt[g];
              }
          std::vector<T> mean(G), inv(G);
          for (int g = 0; g < G; ++g) {
            const double m = sum[g] / cnt[g];
            const double var = std::max(0.0, sq[g] / cnt[g] - m * m);
            mean[g] = static_cast<T>(m);
            inv[g] = static_cast<T>(1.0 / std::sqrt(var + kNormEps));
          }
          norm_apply(l, p, X.data.data(), Y.data.data(), N, F, mean.data(), inv.data());
          if (tape) {
            tape->norm_mean[li] = std::move(mean);
            tape->norm_inv_std[li] = std::move(inv);
          }
        } else {
          norm_apply(l, p, X.data.data(), Y.data.data(), N, F, p.running_mean.data(), p.frozen_inv_std.data());
          if (tape) {
            tape->norm_mean[li].assign(p.running_mean.data(), p.running_mean.data() + G);
            tape->norm_inv_std[li].assign(p.frozen_inv_std.data(), p.frozen_inv_std.data() + G);
          }
        }
        break;
      }
      case OpKind::FreqDown:
      case OpKind::FreqUp:
        for (int c = 0; c < l.cin; ++c)
          for (int n = 0; n < N; ++n) {
            const T* x = X.channel(c) + static_cast<std::size_t>(n) * F;
            T* y = Y.channel(c) + static_cast<std::size_t>(n) * Fo;
            for (int o = 0; o < Fo; ++o) {
              T acc{};
              for (const auto& [src, w] : p.taps[o]) acc += w * x[src];
              y[o] = acc;
            }
          }
        break;
      case OpKind::Add: {
        const auto& X2 = acts[l.in2];
        const T s = static_cast<T>(l.scale);
        for (std::size_t i = 0; i < X.data.size(); ++i) Y.data[i] = (X.data[i] + X2.data[i]) * s;
        break;
      }
      case OpKind::Inject:
        for (int b = 0; b < B; ++b) {
          Eigen::Map<const Vec> e(emb.data() + static_cast<std::size_t>(b) * prog_.emb_dim, prog_.emb_dim);
          for (int c = 0; c < l.cout; ++c) {
            const T shift = p.w.row(c).dot(e) + p.bias(c);
            const std::size_t off = c * plane + static_cast<std::size_t>(b) * T_ * F;
            for (std::size_t i = 0; i < static_cast<std::size_t>(T_) * F; ++i)
              Y.data[off + i] = X.data[off + i] + shift;
          }
        }
        break;
    }
    acts[l.out] = std::move(Y);
    if (tape) continue;
    // Release inputs whose last consumer was this layer.
    if (last_use_[l.in] == static_cast<int>(li) && l.in != prog_.output_slot) acts[l.in] = {};
    if (l.in2 >= 0 && last_use_[l.in2] == static_cast<int>(li) && l.in2 != prog_.output_slot) acts[l.in2] = {};
  }
  Activation<T> out = acts[prog_.output_slot];
  if (tape) tape->slots = std::move(acts);
  return out;
}

template <class T>
Activation<T> Network<T>::forward(const Activation<T>& input, std::span<const double> taus) const {
  return run(input, taus, nullptr, false);
}

template <class T>
StreamBuffers<T> Network<T>::make_buffers() const {
  StreamBuffers<T> b;
  b.rings.resize(prog_.layers.size());
  for (std::size_t i = 0; i < prog_.layers.size(); ++i) {
    const auto& l = prog_.layers[i];
    const int cap = l.delay();
    if (cap == 0) continue;
    auto& r = b.rings[i];
    r.capacity = cap;
    r.frame_size = l.cin * prog_.slots[l.in].bins;
    r.data.assign(static_cast<std::size_t>(cap) * r.frame_size, T{});
  }
  return b;
}

template <class T>
FrameScratch<T> Network<T>::make_scratch() const {
  FrameScratch<T> s;
  s.slots.resize(prog_.slots.size());
  for (std::size_t i = 0; i < prog_.slots.size(); ++i)
    s.slots[i].assign(static_cast<std::size_t>(prog_.slots[i].channels) * prog_.slots[i].bins, T{});
  std::size_t cols = 0, mid = 0, shift = 0;
  for (const auto& l : prog_.layers) {
    const std::size_t F = prog_.slots[l.in].bins;
    if (l.kind == OpKind::Conv || l.kind == OpKind::DConv)
      cols = std::max(cols, static_cast<std::size_t>(l.cin) * l.kt * l.kf * F);
    if (l.kind == OpKind::DConv) mid = std::max(mid, static_cast<std::size_t>(l.cin) * l.rank * F);
    shift = std::max(shift, static_cast<std::size_t>(l.cout));
  }
  s.cols.assign(cols, T{});
  s.mid.assign(std::max<std::size_t>(mid, 1), T{});
  s.emb.assign(static_cast<std::size_t>(prog_.emb_dim), T{});
  s.shift.assign(shift, T{});
  return s;
}

template <class T>
void Network<T>::forward_frame(std::span<const T> in, double tau, StreamBuffers<T>& buffers,
                               FrameScratch<T>& scratch, std::span<T> out) const {
  if (in.size() != scratch.slots[prog_.input_slot].size() || out.size() != scratch.slots[prog_.output_slot].size())
    throw ShapeError("forward_frame: frame size mismatch");
  if (buffers.rings.size() != prog_.layers.size()) throw ShapeError("forward_frame: buffers belong to another network");
  std::copy(in.begin(), in.end(), scratch.slots[prog_.input_slot].begin());
  if (prog_.time_conditioned) time_embed<T>(tau, scratch.emb);
  for (std::size_t li = 0; li < prog_.layers.size(); ++li) {
    const auto& l = prog_.layers[li];
    const auto& p = layers_[li];
    const T* x = scratch.slots[l.in].data();
    T* y = scratch.slots[l.out].data();
    const int F = prog_.slots[l.in].bins, Fo = prog_.slots[l.out].bins;
    switch (l.kind) {
      case OpKind::Conv:
      case OpKind::DConv: {
        auto& ring = buffers.rings[li];
        auto fetch = [&](int ci, int lag, int) -> const T* {
          return (lag == 0 ? x : ring.past(lag)) + static_cast<std::size_t>(ci) * F;
        };
        im2col(l, F, 1, fetch, scratch.cols.data());
        conv_apply(l, p, scratch.cols.data(), F, y, static_cast<std::size_t>(F), scratch.mid.data());
        if (ring.capacity > 0) ring.push(x);
        break;
      }
      case OpKind::SiLU:
        for (int i = 0; i < l.cin * F; ++i) y[i] = x[i] * sigmoid(x[i]);
        break;
      case OpKind::Norm:
        norm_apply(l, p, x, y, 1, F, p.running_mean.data(), p.frozen_inv_std.data());
        break;
      case OpKind::FreqDown:
      case OpKind::FreqUp:
        for (int c = 0; c < l.cin; ++c)
          for (int o = 0; o < Fo; ++o) {
            T acc{};
            for (const auto& [src, w] : p.taps[o]) acc += w * x[c * F + src];
            y[c * Fo + o] = acc;
          }
        break;
      case OpKind::Add: {
        const T* x2 = scratch.slots[l.in2].data();
        const T s = static_cast<T>(l.scale);
        for (int i = 0; i < l.cin * F; ++i) y[i] = (x[i] + x2[i]) * s;
        break;
      }
      case OpKind::Inject: {
        Eigen::Map<const Vec> e(scratch.emb.data(), prog_.emb_dim);
        for (int c = 0; c < l.cout; ++c) {
          const T shift = p.w.row(c).dot(e) + p.bias(c);
          for (int f = 0; f < F; ++f) y[c * F + f] = x[c * F + f] + shift;
        }
        break;
      }
    }
  }
  const auto& o = scratch.slots[prog_.output_slot];
  std::copy(o.begin(), o.end(), out.begin());
}

template <class T>
Activation<T> Network<T>::forward_train(const Activation<T>& input, std::span<const double> taus, Tape<T>& tape,
                                        bool batch_stats, double momentum) {
  auto out = run(input, taus, &tape, batch_stats);
  if (!batch_stats) return out;
  for (std::size_t li = 0; li < prog_.layers.size(); ++li) {
    const auto& l = prog_.layers[li];
    if (l.kind != OpKind::Norm) continue;
    auto& p = layers_[li];
    const auto& X = tape.slots[l.in];
    const double count =
        static_cast<double>(X.plane()) * (l.cin / l.channel_groups) / static_cast<double>(l.freq_groups);
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (Eigen::Index g = 0; g < p.running_mean.size(); ++g) {
      const double m = tape.norm_mean[li][g];
      const double is = tape.norm_inv_std[li][g];
      const double var = std::max(0.0, 1.0 / (is * is) - kNormEps) * unbias;
      p.running_mean(g) = static_cast<T>((1 - momentum) * p.running_mean(g) + momentum * m);
      p.running_var(g) = static_cast<T>((1 - momentum) * p.running_var(g) + momentum * var);
    }
  }
  refresh_frozen();
  return out;
}

template <class T>
Activation<T> Network<T>::backward(const Tape<T>& tape, const Activation<T>& grad_out, GradStore<T>& grads) const {
  const auto& acts = tape.slots;
  if (acts.size() != prog_.slots.size()) throw ShapeError("backward: tape does not match network");
  const auto& Xin = acts[prog_.input_slot];
  const int B = Xin.batch, T_ = Xin.frames, N = B * T_;
  std::vector<Activation<T>> d(prog_.slots.size());
  d[prog_.output_slot] = grad_out;
  auto ensure = [&](int slot) -> Activation<T>& {
    auto& a = d[slot];
    if (a.data.empty()) a = Activation<T>(prog_.slots[slot].channels, B, T_, prog_.slots[slot].bins);
    return a;
  };
  std::vector<T> cols, mid, dcols, dmid;
  for (std::size_t li = prog_.layers.size(); li-- > 0;) {
    const auto& l = prog_.layers[li];
    const auto& p = layers_[li];
    if (d[l.out].data.empty()) continue;
    const Activation<T>& dY = d[l.out];
    const Activation<T>& X = acts[l.in];
    Activation<T>& dX = ensure(l.in);
    const int F = X.bins, Fo = dY.bins;
    const int base = param_base_[li];
    switch (l.kind) {
      case OpKind::Conv:
      case OpKind::DConv: {
        const int kk = l.kt * l.kf;
        const std::size_t K = static_cast<std::size_t>(l.cin) * kk;
        const int pad = (l.kf - 1) / 2;
        const int chunk = static_cast<int>(std::max<std::size_t>(1, kMaxColElements / (K * F)));
        const bool dconv = l.kind == OpKind::DConv;
        T* gw = grads.grads[base + (dconv ? 1 : 0)].data();
        T* gb = grads.grads[base + (dconv ? 2 : 1)].data();
        RowMap<T> dW(gw, p.w.rows(), p.w.cols(), Eigen::OuterStride<>(p.w.cols()));
        for (int n0 = 0; n0 < N; n0 += chunk) {
          const int nc = std::min(chunk, N - n0);
          const int len = nc * F;
          cols.resize(K * len);
          dcols.resize(K * len);
          auto fetch = [&](int ci, int lag, int n) -> const T* {
            const int g = n0 + n, b = g / T_, t = g % T_ - lag;
            if (t < 0) return nullptr;
            return X.channel(ci) + (static_cast<std::size_t>(b) * T_ + t) * F;
          };
          im2col(l, F, nc, fetch, cols.data());
          ConstRowMap<T> C(cols.data(), K, len, Eigen::OuterStride<>(len));
          ConstRowMap<T> G(dY.data.data() + static_cast<std::size_t>(n0) * F, l.cout, len,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(dY.plane())));
          RowMap<T> dC(dcols.data(), K, len, Eigen::OuterStride<>(len));
          for (int c = 0; c < l.cout; ++c) gb[c] += G.row(c).sum();
          if (!dconv) {
            dW.noalias() += G * C.transpose();
            dC.noalias() = p.w.transpose() * G;
          } else {
            const int J = l.rank;
            mid.resize(static_cast<std::size_t>(l.cin) * J * len);
            dmid.resize(mid.size());
            RowMap<T> M(mid.data(), l.cin * J, len, Eigen::OuterStride<>(len));
            RowMap<T> dM(dmid.data(), l.cin * J, len, Eigen::OuterStride<>(len));
            for (int ci = 0; ci < l.cin; ++ci)
              M.middleRows(ci * J, J).noalias() = p.dw.middleRows(ci * J, J) * C.middleRows(ci * kk, kk);
            dW.noalias() += G * M.transpose();
            dM.noalias() = p.w.transpose() * G;
            RowMap<T> dDW(grads.grads[base].data(), p.dw.rows(), p.dw.cols(), Eigen::OuterStride<>(p.dw.cols()));
            for (int ci = 0; ci < l.cin; ++ci) {
              dDW.middleRows(ci * J, J).noalias() += dM.middleRows(ci * J, J) * C.middleRows(ci * kk, kk).transpose();
              dC.middleRows(ci * kk, kk).noalias() = p.dw.middleRows(ci * J, J).transpose() * dM.middleRows(ci * J, J);
            }
          }
          // col2im: scatter column gradients back onto the input frames.
          for (int ci = 0; ci < l.cin; ++ci)
            for (int j = 0; j < l.kt; ++j) {
              const int lag = (l.kt - 1 - j) * l.dt;
              for (int q = 0; q < l.kf; ++q) {
                const T* row = dcols.data() + static_cast<std::size_t>((ci * l.kt + j) * l.kf + q) * len;
                const int shift = q - pad;
                for (int n = 0; n < nc; ++n) {
                  const int g = n0 + n, b = g / T_, t = g % T_ - lag;
                  if (t < 0) continue;
                  T* dst = dX.channel(ci) + (static_cast<std::size_t>(b) * T_ + t) * F;
                  const T* src = row + static_cast<std::size_t>(n) * F;
                  for (int f = std::max(0, -shift); f < std::min(F, F - shift); ++f) dst[f + shift] += src[f];
                }
              }
            }
        }
        break;
      }
      case OpKind::SiLU:
        for (std::size_t i = 0; i < X.data.size(); ++i) {
          const T s = sigmoid(X.data[i]);
          dX.data[i] += dY.data[i] * (s + X.data[i] * s * (T(1) - s));
        }
        break;
      case OpKind::Norm: {
        const int G = l.channel_groups * l.freq_groups;
        const auto& mean = tape.norm_mean[li];
        const auto& inv = tape.norm_inv_std[li];
        T* dgamma = grads.grads[base].data();
        T* dbeta = grads.grads[base + 1].data();
        std::vector<double> sum_dxhat(G, 0.0), sum_dxhat_xhat(G, 0.0);
        std::vector<std::size_t> cnt(G, 0);
        const std::size_t plane = X.plane();
        for (int c = 0; c < l.cin; ++c) {
          double dg = 0.0, db = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const int g = norm_group(l, c, static_cast<int>(i % F), F);
            const double xhat = (X.channel(c)[i] - mean[g]) * inv[g];
            const double dy = dY.channel(c)[i];
            dg += dy * xhat;
            db += dy;
            const double dxhat = dy * p.gamma(c);
            sum_dxhat[g] += dxhat;
            sum_dxhat_xhat[g] += dxhat * xhat;
            ++cnt[g];
          }
          dgamma[c] += static_cast<T>(dg);
          dbeta[c] += static_cast<T>(db);
        }
        for (int c = 0; c < l.cin; ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const int g = norm_group(l, c, static_cast<int>(i % F), F);
            const double dxhat = dY.channel(c)[i] * p.gamma(c);
            if (tape.batch_stats) {
              const double xhat = (X.channel(c)[i] - mean[g]) * inv[g];
              const double m1 = sum_dxhat[g] / cnt[g], m2 = sum_dxhat_xhat[g] / cnt[g];
              dX.channel(c)[i] += static_cast<T>(inv[g] * (dxhat - m1 - xhat * m2));
            } else {
              dX.channel(c)[i] += static_cast<T>(inv[g] * dxhat);
            }
          }
        break;
      }
      case OpKind::FreqDown:
      case OpKind::FreqUp:
        for (int c = 0; c < l.cin; ++c)
          for (int n = 0; n < N; ++n) {
            T* dx = dX.channel(c) + static_cast<std::size_t>(n) * F;
            const T* dy = dY.channel(c) + static_cast<std::size_t>(n) * Fo;
            for (int o = 0; o < Fo; ++o)
              for (const auto& [src, w] : p.taps[o]) dx[src] += w * dy[o];
          }
        break;
      case OpKind::Add: {
        Activation<T>& dX2 = ensure(l.in2);
        const T s = static_cast<T>(l.scale);
        for (std::size_t i = 0; i < dY.data.size(); ++i) {
          dX.data[i] += s * dY.data[i];
          dX2.data[i] += s * dY.data[i];
        }
        break;
      }
      case OpKind::Inject: {
        T* gw = grads.grads[base].data();
        T* gb = grads.grads[base + 1].data();
        const std::size_t seg = static_cast<std::size_t>(T_) * F;
        for (std::size_t i = 0; i < dY.data.size(); ++i) dX.data[i] += dY.data[i];
        for (int c = 0; c < l.cout; ++c)
          for (int b = 0; b < B; ++b) {
            double s = 0.0;
            const T* g = dY.channel(c) + static_cast<std::size_t>(b) * seg;
            for (std::size_t i = 0; i < seg; ++i) s += g[i];
            gb[c] += static_cast<T>(s);
            const T* e = tape.emb.data() + static_cast<std::size_t>(b) * prog_.emb_dim;
            for (int k = 0; k < prog_.emb_dim; ++k) gw[static_cast<std::size_t>(c) * prog_.emb_dim + k] += static_cast<T>(s) * e[k];
          }
        break;
      }
    }
    if (l.out != prog_.output_slot) d[l.out] = {};
  }
  auto& din = d[prog_.input_slot];
  if (din.data.empty()) din = Activation<T>(Xin.channels, B, T_, Xin.bins);
  return din;
}

template <class T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t li = 0; li < prog_.layers.size(); ++li) {
    const auto& l = prog_.layers[li];
    auto& p = layers_[li];
    auto mat = [&](const std::string& n, RowMat& m, bool tr = true) {
      out.push_back({l.name + n, m.data(), static_cast<std::size_t>(m.size()), tr});
    };
    auto vec = [&](const std::string& n, Vec& v, bool tr = true) {
      out.push_back({l.name + n, v.data(), static_cast<std::size_t>(v.size()), tr});
    };
    switch (l.kind) {
      case OpKind::Conv:
        mat(".weight", p.w);
        vec(".bias", p.bias);
        break;
      case OpKind::DConv:
        mat(".depthwise", p.dw);
        mat(".pointwise", p.w);
        vec(".bias", p.bias);
        break;
      case OpKind::Norm:
        vec(".gamma", p.gamma);
        vec(".beta", p.beta);
        vec(".running_mean", p.running_mean, false);
        vec(".running_var", p.running_var, false);
        break;
      case OpKind::Inject:
        mat(".weight", p.w);
        vec(".bias", p.bias);
        break;
      default:
        break;
    }
  }
  return out;
}

template <class T>
GradStore<T> Network<T>::make_grads() {
  GradStore<T> g;
  for (const auto& p : parameters()) g.grads.emplace_back(p.size, T{});
  return g;
}

template <class T>
WeightStore Network<T>::to_weights() const {
  WeightStore w;
  auto& self = const_cast<Network<T>&>(*this);
  const auto infos = prog_.params();
  const auto refs = self.parameters();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Tensor t(infos[i].shape);
    for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = static_cast<float>(refs[i].data[k]);
    w[refs[i].name] = std::move(t);
  }
  return w;
}

template class Network<float>;
template class Network<double>;

template <class T>
Activation<T> pack_complex(std::span<const FrameSeq* const> seqs) {
  if (seqs.empty()) throw ShapeError("pack_complex: no sequences");
  const auto& first = *seqs[0];
  Activation<T> a(static_cast<int>(2 * seqs.size()), 1, static_cast<int>(first.frames()),
                  static_cast<int>(first.bins()));
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const auto& s = *seqs[k];
    if (!s.same_shape(first)) throw ShapeError("pack_complex: sequences differ in shape");
    T* re = a.channel(static_cast<int>(2 * k));
    T* im = a.channel(static_cast<int>(2 * k + 1));
    auto d = s.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      re[i] = static_cast<T>(d[i].real());
      im[i] = static_cast<T>(d[i].imag());
    }
  }
  return a;
}

template <class T>
FrameSeq unpack_complex(const Activation<T>& act, int pair, int batch_index) {
  FrameSeq s(static_cast<std::size_t>(act.frames), static_cast<std::size_t>(act.bins));
  const std::size_t seg = static_cast<std::size_t>(act.frames) * act.bins;
  const T* re = act.channel(2 * pair) + batch_index * seg;
  const T* im = act.channel(2 * pair + 1) + batch_index * seg;
  auto d = s.data();
  for (std::size_t i = 0; i < seg; ++i) d[i] = cplx(re[i], im[i]);
  return s;
}

template Activation<float> pack_complex<float>(std::span<const FrameSeq* const>);
template Activation<double> pack_complex<double>(std::span<const FrameSeq* const>);
template FrameSeq unpack_complex<float>(const Activation<float>&, int, int);
template FrameSeq unpack_complex<double>(const Activation<double>&, int, int);

}  // namespace sfm::net
