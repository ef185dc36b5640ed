#pragma once

#include <map>
#include <string>
#include <vector>

#include "sfm/net/program.hpp"
#include "sfm/rng.hpp"

namespace sfm::net {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f);
  std::size_t numel() const noexcept { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Named float tensors; std::map keeps iteration (and serialization) ordered.
using WeightStore = std::map<std::string, Tensor>;

struct InitOptions {
  bool zero_output = true;       // zero the final conv so a fresh net predicts 0
  std::string output_layer = "conv_out";
};

// Fan-in scaled normal weights, zero biases, identity normalization
// (gamma 1, beta 0, running mean 0, running variance 1), zero injection.
WeightStore init_weights(const Program& prog, Rng& rng, const InitOptions& opt = {});

// Throws ShapeError naming the first missing or mis-shaped tensor.
void check_weights(const Program& prog, const WeightStore& weights);

// Copies the tensors of `src` with names prefixed by `prefix` into `dst`
// (stripping the prefix) or the reverse.
WeightStore strip_prefix(const WeightStore& src, const std::string& prefix);
void merge_prefixed(WeightStore& dst, const WeightStore& src, const std::string& prefix);

}  // namespace sfm::net
