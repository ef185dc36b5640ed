#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfm/net/network.hpp"
#include "sfm/net/program.hpp"
#include "sfm/net/weights.hpp"

namespace sfm::compress {

// A k_h x k_w convolution split per input channel i into J depthwise kernels
// and a pointwise mixing matrix via the SVD of W[:, i] (n_o x k_h k_w).
// Singular values are split as sqrt(S) on both sides.
struct DecoupledConv {
  int out_channels = 0, in_channels = 0, kh = 0, kw = 0, rank = 0;
  std::vector<double> depthwise;  // [n_i][J][k_h][k_w]
  std::vector<double> pointwise;  // [n_o][n_i J]
  std::vector<std::vector<double>> singular_values;  // per input channel, all K of them

  int full_rank() const noexcept { return std::min(out_channels, kh * kw); }
  // Per input channel: sqrt of the sum of squared discarded singular values.
  std::vector<double> discarded_norm() const;
  // Composed weight [n_o][n_i][k_h][k_w].
  std::vector<double> reconstruct() const;
  net::Tensor depthwise_tensor() const;
  net::Tensor pointwise_tensor() const;
};

// weight: [n_o][n_i][k_h][k_w]. Requires 1 <= rank <= min(n_o, k_h k_w).
DecoupledConv decouple(std::span<const double> weight, int n_o, int n_i, int kh, int kw, int rank);
DecoupledConv decouple(const net::Tensor& weight, int rank);

// Depthwise stage then pointwise stage, with the causal time dilation and the
// symmetric frequency padding of the original layer. No bias.
net::Activation<double> compose_apply(const DecoupledConv& dc, const net::Activation<double>& input,
                                      int dilation = 1);

// Layers replaced by compression: 3x3 convolutions with at least 9 outputs.
bool eligible(const net::LayerSpec& layer);
std::vector<std::string> eligible_layers(const net::Program& prog);

struct Compressed {
  net::NetSpec spec;
  net::WeightStore weights;
  std::vector<std::string> replaced;
};

// Decouples every eligible layer of an uncompressed spec at rank J; all other
// tensors are copied unchanged.
Compressed compress_netspec(const net::NetSpec& spec, const net::WeightStore& weights, int rank);

// Analytic FLOPs per output frame (one multiply-add = 2 FLOPs): convolutions,
// both decoupled stages, time-embedding projections and resampling filters.
// Elementwise operations are not counted.
std::uint64_t flop_count(const net::Program& prog);
std::uint64_t flop_count(const net::NetSpec& spec);
std::uint64_t layer_flops(const net::Program& prog, const net::LayerSpec& layer);

}  // namespace sfm::compress
