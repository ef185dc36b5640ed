#include "sfm/net/program.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfm/error.hpp"

namespace sfm::net {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv: return "conv";
    case OpKind::DConv: return "dconv";
    case OpKind::SiLU: return "silu";
    case OpKind::Norm: return "norm";
    case OpKind::FreqDown: return "freq_down";
    case OpKind::FreqUp: return "freq_up";
    case OpKind::Add: return "add";
    case OpKind::Inject: return "inject";
  }
  return "?";
}

int Program::receptive_field() const {
  std::vector<int> depth(slots.size(), -1);
  depth[input_slot] = 0;
  for (const auto& l : layers) {
    int d = depth.at(l.in);
    if (l.in2 >= 0) d = std::max(d, depth.at(l.in2));
    if (d < 0) continue;  // not reachable from the input
    depth.at(l.out) = d + l.delay();
  }
  return 1 + std::max(0, depth.at(output_slot));
}

int Program::receptive_field_bound() const {
  int r = 1;
  for (const auto& l : layers) r += l.delay();
  return r;
}

std::vector<ParamInfo> Program::params() const {
  std::vector<ParamInfo> out;
  for (const auto& l : layers) {
    switch (l.kind) {
      case OpKind::Conv:
        out.push_back({l.name + ".weight", {l.cout, l.cin, l.kt, l.kf}});
        out.push_back({l.name + ".bias", {l.cout}});
        break;
      case OpKind::DConv:
        out.push_back({l.name + ".depthwise", {l.cin, l.rank, l.kt, l.kf}});
        out.push_back({l.name + ".pointwise", {l.cout, l.cin * l.rank}});
        out.push_back({l.name + ".bias", {l.cout}});
        break;
      case OpKind::Norm: {
        const int g = l.channel_groups * l.freq_groups;
        out.push_back({l.name + ".gamma", {l.cin}});
        out.push_back({l.name + ".beta", {l.cin}});
        out.push_back({l.name + ".running_mean", {g}, false});
        out.push_back({l.name + ".running_var", {g}, false});
        break;
      }
      case OpKind::Inject:
        out.push_back({l.name + ".weight", {l.cout, emb_dim}});
        out.push_back({l.name + ".bias", {l.cout}});
        break;
      default:
        break;
    }
  }
  return out;
}

std::size_t Program::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) {
    if (!p.trainable) continue;
    n += std::accumulate(p.shape.begin(), p.shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  return n;
}

void Program::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("program: " + msg); };
  const int ns = static_cast<int>(slots.size());
  if (input_slot < 0 || input_slot >= ns || output_slot < 0 || output_slot >= ns) fail("input/output slot out of range");
  std::vector<bool> written(slots.size(), false);
  written[input_slot] = true;
  for (const auto& l : layers) {
    const std::string where = std::string(op_name(l.kind)) + " '" + l.name + "'";
    if (l.in < 0 || l.in >= ns || !written[l.in]) fail(where + " reads an unwritten slot");
    if (l.in2 >= 0 && (l.in2 >= ns || !written[l.in2])) fail(where + " reads an unwritten slot");
    if (l.out < 0 || l.out >= ns || written[l.out]) fail(where + " writes an invalid or already-written slot");
    written[l.out] = true;
    const auto& si = slots[l.in];
    const auto& so = slots[l.out];
    if (si.channels != l.cin) fail(where + " input channel mismatch");
    if (so.channels != l.cout) fail(where + " output channel mismatch");
    if (l.kt < 1 || l.kf < 1 || l.dt < 1) fail(where + " has a non-positive kernel or dilation");
    if (l.kf % 2 == 0) fail(where + " needs an odd frequency kernel");
    switch (l.kind) {
      case OpKind::FreqDown:
        if (si.bins % 2 != 0) fail(where + " needs an even bin count");
        if (so.bins * 2 != si.bins) fail(where + " bin mismatch");
        break;
      case OpKind::FreqUp:
        if (so.bins != si.bins * 2) fail(where + " bin mismatch");
        break;
      case OpKind::Norm:
        if (l.channel_groups < 1 || l.cin % l.channel_groups != 0) fail(where + " channel groups do not divide channels");
        if (l.freq_groups < 1 || si.bins % l.freq_groups != 0) fail(where + " frequency groups do not divide bins");
        if (so.bins != si.bins) fail(where + " bin mismatch");
        break;
      case OpKind::DConv:
        if (l.rank < 1 || l.rank > std::min(l.cout, l.kt * l.kf)) fail(where + " rank out of range");
        [[fallthrough]];
      default:
        if (so.bins != si.bins) fail(where + " bin mismatch");
    }
    if (l.kind == OpKind::Add) {
      if (l.in2 < 0) fail(where + " needs two inputs");
      if (slots[l.in2].channels != si.channels || slots[l.in2].bins != si.bins) fail(where + " operand shapes differ");
    }
    if (l.kind == OpKind::Inject && !time_conditioned) fail(where + " in a program without time conditioning");
  }
  if (!written[output_slot]) fail("output slot is never written");
  if (fir.empty() || fir.size() % 2 != 0) fail("FIR kernel must have an even, nonzero number of taps");
}

ProgramBuilder::ProgramBuilder(int in_channels, int bins, std::vector<double> fir, int emb_dim) {
  if (in_channels < 1 || bins < 1) throw ConfigError("ProgramBuilder: empty input");
  prog_.fir = std::move(fir);
  prog_.emb_dim = emb_dim;
  prog_.input_slot = new_slot(in_channels, bins);
}

int ProgramBuilder::new_slot(int channels, int bins) {
  prog_.slots.push_back({channels, bins});
  return static_cast<int>(prog_.slots.size()) - 1;
}

int ProgramBuilder::push(LayerSpec l, int channels, int bins) {
  l.out = new_slot(channels, bins);
  prog_.layers.push_back(std::move(l));
  return prog_.layers.back().out;
}

int ProgramBuilder::conv(const std::string& name, int in, int cout, int kt, int kf, int dt) {
  LayerSpec l;
  l.kind = OpKind::Conv;
  l.name = name;
  l.in = in;
  l.cin = channels(in);
  l.cout = cout;
  l.kt = kt;
  l.kf = kf;
  l.dt = dt;
  return push(std::move(l), cout, bins(in));
}

int ProgramBuilder::dconv(const std::string& name, int in, int cout, int kt, int kf, int dt, int rank) {
  LayerSpec l;
  l.kind = OpKind::DConv;
  l.name = name;
  l.in = in;
  l.cin = channels(in);
  l.cout = cout;
  l.kt = kt;
  l.kf = kf;
  l.dt = dt;
  l.rank = rank;
  return push(std::move(l), cout, bins(in));
}

int ProgramBuilder::silu(int in) {
  LayerSpec l;
  l.kind = OpKind::SiLU;
  l.in = in;
  l.cin = l.cout = channels(in);
  return push(std::move(l), l.cout, bins(in));
}

int ProgramBuilder::norm(const std::string& name, int in, int channel_groups, int freq_groups) {
  LayerSpec l;
  l.kind = OpKind::Norm;
  l.name = name;
  l.in = in;
  l.cin = l.cout = channels(in);
  l.channel_groups = channel_groups;
  l.freq_groups = freq_groups;
  return push(std::move(l), l.cout, bins(in));
}

int ProgramBuilder::freq_down(int in) {
  LayerSpec l;
  l.kind = OpKind::FreqDown;
  l.in = in;
  l.cin = l.cout = channels(in);
  if (bins(in) % 2 != 0) throw ConfigError("freq_down: odd bin count " + std::to_string(bins(in)));
  return push(std::move(l), l.cout, bins(in) / 2);
}

int ProgramBuilder::freq_up(int in) {
  LayerSpec l;
  l.kind = OpKind::FreqUp;
  l.in = in;
  l.cin = l.cout = channels(in);
  return push(std::move(l), l.cout, bins(in) * 2);
}

int ProgramBuilder::add(int a, int b, double scale) {
  LayerSpec l;
  l.kind = OpKind::Add;
  l.in = a;
  l.in2 = b;
  if (channels(a) != channels(b) || bins(a) != bins(b))
    throw ShapeError("add: operand shapes differ (" + std::to_string(channels(a)) + "x" + std::to_string(bins(a)) +
                     " vs " + std::to_string(channels(b)) + "x" + std::to_string(bins(b)) + ")");
  l.cin = l.cout = channels(a);
  l.scale = scale;
  return push(std::move(l), l.cout, bins(a));
}

int ProgramBuilder::inject(const std::string& name, int in) {
  LayerSpec l;
  l.kind = OpKind::Inject;
  l.name = name;
  l.in = in;
  l.cin = l.cout = channels(in);
  prog_.time_conditioned = true;
  return push(std::move(l), l.cout, bins(in));
}

Program ProgramBuilder::finish(int output_slot) {
  prog_.output_slot = output_slot;
  prog_.validate();
  return prog_;
}

int norm_channel_groups(int channels, int max_groups) {
  int g = std::clamp(channels / 4, 1, max_groups);
  while (channels % g != 0) --g;
  return g;
}

NetSpec NetSpec::desk() { return NetSpec{}; }

NetSpec NetSpec::full_scale() {
  NetSpec s;
  s.bins = 256;
  s.channels = {128, 256, 256, 256};
  s.res_blocks = 2;
  return s;
}

NetSpec NetSpec::predictor_variant() const {
  NetSpec s = *this;
  s.time_conditioning = false;
  s.in_complex = 1;
  return s;
}

void NetSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("net spec: " + msg); };
  if (channels.empty()) fail("at least one level required");
  for (int c : channels)
    if (c < 1) fail("channel counts must be positive");
  if (res_blocks < 1) fail("res_blocks must be >= 1");
  if (kt < 1 || kf < 1 || kf % 2 == 0 || dt < 1) fail("kernel sizes must be positive with odd kf");
  if (in_complex < 1 || out_complex < 1) fail("complex channel counts must be positive");
  if (emb_dim < 2 || emb_dim % 2 != 0) fail("emb_dim must be even");
  if (fir.empty() || fir.size() % 2 != 0) fail("FIR kernel must have an even number of taps");
  const int div = 1 << (levels() - 1);
  if (bins < 1 || bins % div != 0)
    fail("bins (" + std::to_string(bins) + ") must be divisible by 2^(levels-1) = " + std::to_string(div));
  if ((bins / div) % freq_groups != 0) fail("bins at the deepest level must be divisible by freq_groups");
  if (decouple_rank < 0 || decouple_rank > kt * kf) fail("decouple_rank out of range");
}

namespace {

struct UNetBuilder {
  const NetSpec& spec;
  ProgramBuilder b;
  int counter = 0;

  int conv(const std::string& name, int in, int cout, int kt, int kf) {
    const int dt = kt > 1 ? spec.dt : 1;
    const bool eligible = spec.decouple_rank > 0 && kt == 3 && kf == 3 && cout >= 9;
    if (eligible) {
      const int k = std::min(cout, kt * kf);
      if (spec.decouple_rank > k) throw ConfigError("net spec: decouple_rank exceeds K for " + name);
      return b.dconv(name, in, cout, kt, kf, dt, spec.decouple_rank);
    }
    return b.conv(name, in, cout, kt, kf, dt);
  }

  int norm(const std::string& name, int in) {
    return b.norm(name, in, norm_channel_groups(b.channels(in), spec.max_channel_groups), spec.freq_groups);
  }

  int res_block(const std::string& name, int h, int cout) {
    const int cin = b.channels(h);
    int a = norm(name + ".norm1", h);
    a = b.silu(a);
    a = conv(name + ".conv1", a, cout, spec.kt, spec.kf);
    if (spec.time_conditioning) a = b.inject(name + ".temb", a);
    a = norm(name + ".norm2", a);
    a = b.silu(a);
    a = conv(name + ".conv2", a, cout, spec.kt, spec.kf);
    int skip = h;
    if (cin != cout) skip = b.conv(name + ".skip", h, cout, 1, 1, 1);
    return b.add(a, skip, 1.0 / std::sqrt(2.0));
  }
};

}  // namespace

Program build_program(const NetSpec& spec) {
  spec.validate();
  UNetBuilder u{spec, ProgramBuilder(2 * spec.in_complex, spec.bins, spec.fir, spec.emb_dim)};
  auto& b = u.b;
  const int L = spec.levels();
  const int x0 = b.input();
  int h = u.conv("conv_in", x0, spec.channels[0], spec.kt, spec.kf);
  int pyramid = x0;
  std::vector<int> skips;
  for (int l = 0; l < L; ++l) {
    const std::string lvl = "enc" + std::to_string(l);
    if (l > 0) {
      h = b.freq_down(h);
      if (spec.progressive_input) {
        pyramid = b.freq_down(pyramid);
        const int proj = b.conv(lvl + ".input_proj", pyramid, b.channels(h), 1, 1, 1);
        h = b.add(h, proj, 1.0);
      }
    }
    for (int r = 0; r < spec.res_blocks; ++r) h = u.res_block(lvl + ".res" + std::to_string(r), h, spec.channels[l]);
    skips.push_back(h);
  }
  h = u.res_block("mid", h, spec.channels[L - 1]);
  for (int l = L - 1; l >= 0; --l) {
    const std::string lvl = "dec" + std::to_string(l);
    if (l < L - 1) h = b.freq_up(h);
    h = u.res_block(lvl + ".res0", h, spec.channels[l]);
    h = b.add(h, skips[static_cast<std::size_t>(l)], 1.0 / std::sqrt(2.0));
    for (int r = 1; r < spec.res_blocks; ++r) h = u.res_block(lvl + ".res" + std::to_string(r), h, spec.channels[l]);
  }
  h = u.norm("out.norm", h);
  h = b.silu(h);
  h = b.conv("conv_out", h, 2 * spec.out_complex, spec.kt, spec.kf, spec.kt > 1 ? spec.dt : 1);
  return b.finish(h);
}

int receptive_field(const NetSpec& spec) { return build_program(spec).receptive_field(); }

}  // namespace sfm::net
