#pragma once

#include <algorithm>

#include "sfm/net/program.hpp"
#include "sfm/net/weights.hpp"
#include "sfm/rng.hpp"

namespace sfm::testing {

// Tiny U-Net: 8 bins, two levels.
inline net::NetSpec small_spec() {
  net::NetSpec s;
  s.bins = 8;
  s.channels = {4, 8};
  s.freq_groups = 2;
  s.max_channel_groups = 2;
  s.emb_dim = 8;
  return s;
}

// Every tensor random, including biases, norm affine, running statistics and
// the zero-initialized time injections.
inline net::WeightStore random_weights(const net::Program& prog, std::uint64_t seed, float scale = 1.0f) {
  Rng rng(seed);
  net::InitOptions opt;
  opt.zero_output = false;
  auto w = net::init_weights(prog, rng, opt);
  for (auto& [name, t] : w) {
    const bool all_zero = std::all_of(t.data.begin(), t.data.end(), [](float v) { return v == 0.0f; });
    const bool var = name.ends_with("running_var");
    const bool gamma = name.ends_with("gamma");
    const bool weight = name.ends_with(".weight") || name.ends_with("wise");
    for (auto& v : t.data) {
      if (var) v = 0.5f + static_cast<float>(rng.uniform());
      else if (gamma) v = 0.7f + 0.6f * static_cast<float>(rng.uniform());
      else if (!weight || all_zero) v = 0.2f * static_cast<float>(rng.normal());
      else v *= scale;
    }
  }
  return w;
}

}  // namespace sfm::testing
