#include "sfm/compress/decouple.hpp"

#include <cmath>

#include <Eigen/SVD>

#include "sfm/error.hpp"

namespace sfm::compress {

std::vector<double> DecoupledConv::discarded_norm() const {
  std::vector<double> out;
  out.reserve(singular_values.size());
  for (const auto& s : singular_values) {
    double e = 0.0;
    for (std::size_t j = static_cast<std::size_t>(rank); j < s.size(); ++j) e += s[j] * s[j];
    out.push_back(std::sqrt(e));
  }
  return out;
}

std::vector<double> DecoupledConv::reconstruct() const {
  const int P = kh * kw, J = rank;
  std::vector<double> w(static_cast<std::size_t>(out_channels) * in_channels * P);
  for (int o = 0; o < out_channels; ++o)
    for (int i = 0; i < in_channels; ++i)
      for (int p = 0; p < P; ++p) {
        double acc = 0.0;
        for (int j = 0; j < J; ++j)
          acc += pointwise[static_cast<std::size_t>(o) * in_channels * J + i * J + j] *
                 depthwise[(static_cast<std::size_t>(i) * J + j) * P + p];
        w[(static_cast<std::size_t>(o) * in_channels + i) * P + p] = acc;
      }
  return w;
}

net::Tensor DecoupledConv::depthwise_tensor() const {
  net::Tensor t({in_channels, rank, kh, kw});
  std::transform(depthwise.begin(), depthwise.end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
  return t;
}

net::Tensor DecoupledConv::pointwise_tensor() const {
  net::Tensor t({out_channels, in_channels * rank});
  std::transform(pointwise.begin(), pointwise.end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
  return t;
}

DecoupledConv decouple(std::span<const double> weight, int n_o, int n_i, int kh, int kw, int rank) {
  if (n_o < 1 || n_i < 1 || kh < 1 || kw < 1) throw ShapeError("decouple: degenerate weight shape");
  const int P = kh * kw;
  if (weight.size() != static_cast<std::size_t>(n_o) * n_i * P)
    throw ShapeError("decouple: weight has " + std::to_string(weight.size()) + " entries, shape needs " +
                     std::to_string(static_cast<std::size_t>(n_o) * n_i * P));
  const int K = std::min(n_o, P);
  if (rank < 1 || rank > K)
    throw ConfigError("decouple: rank " + std::to_string(rank) + " outside [1, " + std::to_string(K) + "]");
  DecoupledConv dc;
  dc.out_channels = n_o;
  dc.in_channels = n_i;
  dc.kh = kh;
  dc.kw = kw;
  dc.rank = rank;
  dc.depthwise.assign(static_cast<std::size_t>(n_i) * rank * P, 0.0);
  dc.pointwise.assign(static_cast<std::size_t>(n_o) * n_i * rank, 0.0);
  Eigen::MatrixXd m(n_o, P);
  for (int i = 0; i < n_i; ++i) {
    for (int o = 0; o < n_o; ++o)
      for (int p = 0; p < P; ++p) m(o, p) = weight[(static_cast<std::size_t>(o) * n_i + i) * P + p];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    dc.singular_values.emplace_back(s.data(), s.data() + s.size());
    for (int j = 0; j < rank; ++j) {
      const double r = std::sqrt(s(j));
      for (int p = 0; p < P; ++p) dc.depthwise[(static_cast<std::size_t>(i) * rank + j) * P + p] = r * svd.matrixV()(p, j);
      for (int o = 0; o < n_o; ++o)
        dc.pointwise[static_cast<std::size_t>(o) * n_i * rank + i * rank + j] = svd.matrixU()(o, j) * r;
    }
  }
  return dc;
}

DecoupledConv decouple(const net::Tensor& weight, int rank) {
  if (weight.shape.size() != 4) throw ShapeError("decouple: expected a 4-d conv weight");
  std::vector<double> w(weight.data.begin(), weight.data.end());
  return decouple(w, weight.shape[0], weight.shape[1], weight.shape[2], weight.shape[3], rank);
}

net::Activation<double> compose_apply(const DecoupledConv& dc, const net::Activation<double>& input, int dilation) {
  if (input.channels != dc.in_channels)
    throw ShapeError("compose_apply: input has " + std::to_string(input.channels) + " channels, conv expects " +
                     std::to_string(dc.in_channels));
  const int B = input.batch, T = input.frames, F = input.bins, J = dc.rank, P = dc.kh * dc.kw;
  const int pad = (dc.kw - 1) / 2;
  net::Activation<double> mid(dc.in_channels * J, B, T, F);
  for (int i = 0; i < dc.in_channels; ++i)
    for (int j = 0; j < J; ++j) {
      const double* k = dc.depthwise.data() + (static_cast<std::size_t>(i) * J + j) * P;
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            for (int a = 0; a < dc.kh; ++a) {
              const int ts = t - (dc.kh - 1 - a) * dilation;
              if (ts < 0) continue;
              for (int q = 0; q < dc.kw; ++q) {
                const int fs = f + q - pad;
                if (fs < 0 || fs >= F) continue;
                acc += k[a * dc.kw + q] * input.at(i, b, ts, fs);
              }
            }
            mid.at(i * J + j, b, t, f) = acc;
          }
    }
  net::Activation<double> out(dc.out_channels, B, T, F);
  const std::size_t plane = out.plane();
  for (int o = 0; o < dc.out_channels; ++o) {
    double* dst = out.channel(o);
    for (int m = 0; m < dc.in_channels * J; ++m) {
      const double c = dc.pointwise[static_cast<std::size_t>(o) * dc.in_channels * J + m];
      const double* src = mid.channel(m);
      for (std::size_t n = 0; n < plane; ++n) dst[n] += c * src[n];
    }
  }
  return out;
}

bool eligible(const net::LayerSpec& l) {
  return l.kind == net::OpKind::Conv && l.kt == 3 && l.kf == 3 && l.cout >= 9;
}

std::vector<std::string> eligible_layers(const net::Program& prog) {
  std::vector<std::string> out;
  for (const auto& l : prog.layers)
    if (eligible(l)) out.push_back(l.name);
  return out;
}

Compressed compress_netspec(const net::NetSpec& spec, const net::WeightStore& weights, int rank) {
  if (spec.decouple_rank != 0) throw ConfigError("compress: spec is already decoupled");
  if (rank < 1) throw ConfigError("compress: rank must be >= 1");
  const auto prog = net::build_program(spec);
  net::check_weights(prog, weights);
  Compressed c;
  c.spec = spec;
  c.spec.decouple_rank = rank;
  const auto target = net::build_program(c.spec);
  c.weights = weights;
  c.replaced = eligible_layers(prog);
  for (const auto& name : c.replaced) {
    const auto dc = decouple(weights.at(name + ".weight"), rank);
    c.weights.erase(name + ".weight");
    c.weights[name + ".depthwise"] = dc.depthwise_tensor();
    c.weights[name + ".pointwise"] = dc.pointwise_tensor();
  }
  net::check_weights(target, c.weights);
  return c;
}

std::uint64_t layer_flops(const net::Program& prog, const net::LayerSpec& l) {
  const std::uint64_t F = static_cast<std::uint64_t>(prog.slots.at(l.out).bins);
  const std::uint64_t cin = l.cin, cout = l.cout, kk = static_cast<std::uint64_t>(l.kt) * l.kf;
  const std::uint64_t taps = prog.fir.size();
  switch (l.kind) {
    case net::OpKind::Conv: return 2 * cin * cout * kk * F;
    case net::OpKind::DConv: {
      const std::uint64_t J = static_cast<std::uint64_t>(l.rank);
      return 2 * cin * J * kk * F + 2 * cout * cin * J * F;
    }
    case net::OpKind::Inject: return 2 * static_cast<std::uint64_t>(prog.emb_dim) * cout;
    case net::OpKind::FreqDown: return 2 * taps * cout * F;
    case net::OpKind::FreqUp: return 2 * ((taps + 1) / 2) * cout * F;
    default: return 0;
  }
}

std::uint64_t flop_count(const net::Program& prog) {
  std::uint64_t n = 0;
  for (const auto& l : prog.layers) n += layer_flops(prog, l);
  return n;
}

std::uint64_t flop_count(const net::NetSpec& spec) { return flop_count(net::build_program(spec)); }

}  // namespace sfm::compress
