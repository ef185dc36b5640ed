#include "sfm/io/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "sfm/error.hpp"
#include "sfm/net/program.hpp"

namespace sfm::io {
namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

const std::string kPredictorPrefix = "predictor.";

json net_json(const net::NetSpec& s) {
  return {{"bins", s.bins},
          {"channels", s.channels},
          {"res_blocks", s.res_blocks},
          {"kt", s.kt},
          {"kf", s.kf},
          {"dt", s.dt},
          {"fir", s.fir},
          {"freq_groups", s.freq_groups},
          {"max_channel_groups", s.max_channel_groups},
          {"emb_dim", s.emb_dim},
          {"time_conditioning", s.time_conditioning},
          {"in_complex", s.in_complex},
          {"out_complex", s.out_complex},
          {"progressive_input", s.progressive_input},
          {"decouple_rank", s.decouple_rank}};
}

net::NetSpec net_from(const json& j) {
  net::NetSpec s;
  s.bins = j.value("bins", s.bins);
  s.channels = j.value("channels", s.channels);
  s.res_blocks = j.value("res_blocks", s.res_blocks);
  s.kt = j.value("kt", s.kt);
  s.kf = j.value("kf", s.kf);
  s.dt = j.value("dt", s.dt);
  s.fir = j.value("fir", s.fir);
  s.freq_groups = j.value("freq_groups", s.freq_groups);
  s.max_channel_groups = j.value("max_channel_groups", s.max_channel_groups);
  s.emb_dim = j.value("emb_dim", s.emb_dim);
  s.time_conditioning = j.value("time_conditioning", s.time_conditioning);
  s.in_complex = j.value("in_complex", s.in_complex);
  s.out_complex = j.value("out_complex", s.out_complex);
  s.progressive_input = j.value("progressive_input", s.progressive_input);
  s.decouple_rank = j.value("decouple_rank", s.decouple_rank);
  s.validate();
  return s;
}

json stft_json(const dsp::StftConfig& c) {
  return {{"window_len", c.window_len},   {"hop_len", c.hop_len},         {"sample_rate", c.sample_rate},
          {"compress_alpha", c.compress_alpha}, {"keep_nyquist", c.keep_nyquist}};
}

dsp::StftConfig stft_from(const json& j) {
  dsp::StftConfig c;
  c.window_len = j.value("window_len", c.window_len);
  c.hop_len = j.value("hop_len", c.hop_len);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.compress_alpha = j.value("compress_alpha", c.compress_alpha);
  c.keep_nyquist = j.value("keep_nyquist", c.keep_nyquist);
  c.validate();
  return c;
}

json flow_json(const flow::FlowPathParams& p) { return {{"sigma_y", p.sigma_y}, {"sigma_min", p.sigma_min}}; }

flow::FlowPathParams flow_from(const json& j) {
  flow::FlowPathParams p;
  p.sigma_y = j.value("sigma_y", p.sigma_y);
  p.sigma_min = j.value("sigma_min", p.sigma_min);
  return p;
}

template <class F>
auto parse_guarded(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

json layer_kinds(const net::Program& prog) {
  json j = json::object();
  for (const auto& l : prog.layers)
    if (l.has_params()) j[l.name] = net::op_name(l.kind);
  return j;
}

void check_kinds(const json& stored, const net::Program& prog, const std::string& which) {
  const json expected = layer_kinds(prog);
  for (const auto& [name, kind] : expected.items()) {
    if (!stored.contains(name))
      throw ShapeError("container: " + which + " layer '" + name + "' has no layer-kind tag");
    if (stored[name] != kind)
      throw ShapeError("container: " + which + " layer '" + name + "' tagged " + stored[name].get<std::string>() +
                       ", spec builds " + kind.get<std::string>());
  }
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  template <class T>
  T get() {
    if (bytes.size() - pos < sizeof(T)) throw FormatError("container: truncated at byte " + std::to_string(pos));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError("container: truncated at byte " + std::to_string(pos));
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

net::WeightStore ModelFile::flow_weights() const {
  net::WeightStore w;
  for (const auto& [k, v] : weights)
    if (k.rfind(kPredictorPrefix, 0) != 0) w.emplace(k, v);
  return w;
}

net::WeightStore ModelFile::predictor_weights() const { return net::strip_prefix(weights, kPredictorPrefix); }

std::string to_json(const net::NetSpec& spec) { return net_json(spec).dump(2); }
std::string to_json(const dsp::StftConfig& cfg) { return stft_json(cfg).dump(2); }
std::string to_json(const flow::FlowPathParams& params) { return flow_json(params).dump(2); }

net::NetSpec net_spec_from_json(const std::string& text) {
  return parse_guarded("net spec", [&] { return net_from(json::parse(text)); });
}
dsp::StftConfig stft_from_json(const std::string& text) {
  return parse_guarded("stft config", [&] { return stft_from(json::parse(text)); });
}
flow::FlowPathParams flow_params_from_json(const std::string& text) {
  return parse_guarded("flow params", [&] { return flow_from(json::parse(text)); });
}

std::vector<std::uint8_t> encode_model(const ModelFile& m) {
  const auto prog = net::build_program(m.net);
  net::check_weights(prog, m.flow_weights());
  json meta = {{"task", std::string(dsp::task_name(m.task))},
               {"net", net_json(m.net)},
               {"flow", flow_json(m.flow)},
               {"stft", stft_json(m.stft)},
               {"layer_kinds", layer_kinds(prog)}};
  if (m.predictor) {
    const auto pprog = net::build_program(*m.predictor);
    net::check_weights(pprog, m.predictor_weights());
    meta["predictor"] = net_json(*m.predictor);
    meta["predictor_layer_kinds"] = layer_kinds(pprog);
  }
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 4);
  put(out, kContainerVersion);
  put(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put(out, static_cast<std::uint32_t>(m.weights.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : m.weights) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put(out, std::uint8_t{0});
    put(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put(out, static_cast<std::int32_t>(d));
    const std::uint64_t n = t.data.size() * sizeof(float);
    put(out, offset);
    put(out, n);
    offset += n;
  }
  for (const auto& [name, t] : m.weights) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  if (r.str(4) != std::string(kContainerMagic, 4)) throw FormatError("container: bad magic, expected SFMW");
  const auto version = r.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw FormatError("container: unsupported version " + std::to_string(version));
  const std::string text = r.str(r.get<std::uint32_t>());
  const json meta = parse_guarded("container metadata", [&] { return json::parse(text); });

  ModelFile m;
  parse_guarded("container metadata", [&] {
    m.task = dsp::parse_task(meta.at("task").get<std::string>());
    m.net = net_from(meta.at("net"));
    m.flow = flow_from(meta.at("flow"));
    m.stft = stft_from(meta.at("stft"));
    if (meta.contains("predictor")) m.predictor = net_from(meta.at("predictor"));
    return 0;
  });

  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset, size;
  };
  std::vector<Entry> dir(r.get<std::uint32_t>());
  for (auto& e : dir) {
    e.name = r.str(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != 0) throw FormatError("container: tensor '" + e.name + "' has unsupported dtype");
    e.shape.resize(r.get<std::uint32_t>());
    std::uint64_t numel = 1;
    for (auto& d : e.shape) {
      d = r.get<std::int32_t>();
      if (d < 0) throw FormatError("container: tensor '" + e.name + "' has a negative dimension");
      numel *= static_cast<std::uint64_t>(d);
    }
    e.offset = r.get<std::uint64_t>();
    e.size = r.get<std::uint64_t>();
    if (e.size != numel * sizeof(float))
      throw FormatError("container: tensor '" + e.name + "' byte length disagrees with its shape");
  }
  const std::size_t base = r.pos;
  const std::uint64_t payload = bytes.size() - base;
  std::uint64_t expect = 0;
  for (const auto& e : dir) {
    if (e.offset != expect) throw FormatError("container: tensor '" + e.name + "' offset overlaps or leaves a gap");
    if (e.offset + e.size > payload) throw FormatError("container: tensor '" + e.name + "' runs past the payload");
    net::Tensor t(e.shape);
    std::memcpy(t.data.data(), bytes.data() + base + e.offset, e.size);
    if (!m.weights.emplace(e.name, std::move(t)).second)
      throw FormatError("container: duplicate tensor '" + e.name + "'");
    expect += e.size;
  }
  if (expect != payload) throw FormatError("container: trailing bytes after the payload");

  const auto prog = net::build_program(m.net);
  check_kinds(meta.at("layer_kinds"), prog, "flow");
  net::check_weights(prog, m.flow_weights());
  if (m.predictor) {
    const auto pprog = net::build_program(*m.predictor);
    check_kinds(meta.value("predictor_layer_kinds", json::object()), pprog, "predictor");
    net::check_weights(pprog, m.predictor_weights());
  }
  return m;
}

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

std::vector<double> read_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw FormatError("schedule: '" + tok + "' is not a number");
    if (!(v >= 0.0)) throw FormatError("schedule: entries must be non-negative");
    out.push_back(v);
  }
  return out;
}

}  // namespace sfm::io
