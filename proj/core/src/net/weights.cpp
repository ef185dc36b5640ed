#include "sfm/net/weights.hpp"

#include <cmath>
#include <numeric>

#include "sfm/error.hpp"

namespace sfm::net {
namespace {

std::size_t product(const std::vector<int>& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(product(shape), fill) {}

WeightStore init_weights(const Program& prog, Rng& rng, const InitOptions& opt) {
  WeightStore w;
  for (const auto& l : prog.layers) {
    switch (l.kind) {
      case OpKind::Conv: {
        Tensor k({l.cout, l.cin, l.kt, l.kf});
        const bool zero = opt.zero_output && l.name == opt.output_layer;
        const double sd = std::sqrt(1.0 / (l.cin * l.kt * l.kf));
        if (!zero)
          for (auto& v : k.data) v = static_cast<float>(sd * rng.normal());
        w[l.name + ".weight"] = std::move(k);
        w[l.name + ".bias"] = Tensor({l.cout});
        break;
      }
      case OpKind::DConv: {
        Tensor dw({l.cin, l.rank, l.kt, l.kf});
        Tensor pw({l.cout, l.cin * l.rank});
        const double sd_dw = std::sqrt(1.0 / (l.kt * l.kf));
        const double sd_pw = std::sqrt(1.0 / (l.cin * l.rank));
        for (auto& v : dw.data) v = static_cast<float>(sd_dw * rng.normal());
        for (auto& v : pw.data) v = static_cast<float>(sd_pw * rng.normal());
        w[l.name + ".depthwise"] = std::move(dw);
        w[l.name + ".pointwise"] = std::move(pw);
        w[l.name + ".bias"] = Tensor({l.cout});
        break;
      }
      case OpKind::Norm: {
        const int g = l.channel_groups * l.freq_groups;
        w[l.name + ".gamma"] = Tensor({l.cin}, 1.0f);
        w[l.name + ".beta"] = Tensor({l.cin});
        w[l.name + ".running_mean"] = Tensor({g});
        w[l.name + ".running_var"] = Tensor({g}, 1.0f);
        break;
      }
      case OpKind::Inject:
        w[l.name + ".weight"] = Tensor({l.cout, prog.emb_dim});
        w[l.name + ".bias"] = Tensor({l.cout});
        break;
      default:
        break;
    }
  }
  return w;
}

void check_weights(const Program& prog, const WeightStore& weights) {
  for (const auto& p : prog.params()) {
    auto it = weights.find(p.name);
    if (it == weights.end()) throw ShapeError("weights: missing tensor '" + p.name + "'");
    if (it->second.shape != p.shape)
      throw ShapeError("weights: tensor '" + p.name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                       shape_str(p.shape));
    if (it->second.data.size() != product(p.shape))
      throw ShapeError("weights: tensor '" + p.name + "' payload does not match its shape");
    if (ends_with(p.name, ".running_var"))
      for (float v : it->second.data)
        if (!(v >= 0.0f)) throw ShapeError("weights: negative running variance in '" + p.name + "'");
  }
}

WeightStore strip_prefix(const WeightStore& src, const std::string& prefix) {
  WeightStore out;
  for (const auto& [k, v] : src)
    if (k.compare(0, prefix.size(), prefix) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

void merge_prefixed(WeightStore& dst, const WeightStore& src, const std::string& prefix) {
  for (const auto& [k, v] : src) dst[prefix + k] = v;
}

}  // namespace sfm::net
