#include <benchmark/benchmark.h>

#include "sfm/compress/decouple.hpp"
#include "sfm/net/network.hpp"

namespace {

using namespace sfm;

// Range 0 is the rank J; 0 runs the uncompressed net.
void BM_DeskForward(benchmark::State& st) {
  auto spec = net::NetSpec::desk();
  spec.bins = 256;
  const auto prog = net::build_program(spec);
  Rng rng(1);
  net::InitOptions init;
  init.zero_output = false;
  auto weights = net::init_weights(prog, rng, init);
  const int rank = static_cast<int>(st.range(0));
  if (rank > 0) {
    auto c = compress::compress_netspec(spec, weights, rank);
    spec = c.spec;
    weights = std::move(c.weights);
  }
  const net::Network<float> network(net::build_program(spec), weights);
  net::Activation<float> x(4, 1, 16, spec.bins);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  const double tau[] = {0.5};
  for (auto _ : st) benchmark::DoNotOptimize(network.forward(x, tau));
  st.counters["flops_per_frame"] = static_cast<double>(compress::flop_count(spec));
}
BENCHMARK(BM_DeskForward)->Arg(0)->Arg(2)->Arg(4)->Arg(6)->Arg(9)->Unit(benchmark::kMillisecond);

}  // namespace
