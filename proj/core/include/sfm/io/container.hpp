#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfm/dsp/corrupt.hpp"
#include "sfm/dsp/stft.hpp"
#include "sfm/flow/flow.hpp"
#include "sfm/net/weights.hpp"

namespace sfm::io {

inline constexpr char kContainerMagic[4] = {'S', 'F', 'M', 'W'};
inline constexpr std::uint32_t kContainerVersion = 1;

// Everything needed to rebuild an engine: specs, path parameters and weights.
// Predictor tensors live in `weights` under the "predictor." prefix.
struct ModelFile {
  dsp::TaskId task = dsp::TaskId::SE;
  net::NetSpec net;
  std::optional<net::NetSpec> predictor;
  flow::FlowPathParams flow;
  dsp::StftConfig stft;
  net::WeightStore weights;

  net::WeightStore flow_weights() const;
  net::WeightStore predictor_weights() const;
  friend bool operator==(const ModelFile&, const ModelFile&) = default;
};

// Layout: magic, u32 version, u32 metadata length, UTF-8 JSON metadata,
// u32 tensor count, directory entries (u32 name length, name, u8 dtype (0 =
// f32), u32 rank, i32 dims, u64 payload offset, u64 byte length), then the
// little-endian payload. Metadata carries a layer-kind tag per parameterized
// layer; decoding checks tags, shapes and offsets and raises FormatError or
// ShapeError.
std::vector<std::uint8_t> encode_model(const ModelFile& model);
ModelFile decode_model(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

// JSON text forms used by the container metadata and the CLI config files.
std::string to_json(const net::NetSpec& spec);
std::string to_json(const dsp::StftConfig& cfg);
std::string to_json(const flow::FlowPathParams& params);
net::NetSpec net_spec_from_json(const std::string& text);
dsp::StftConfig stft_from_json(const std::string& text);
flow::FlowPathParams flow_params_from_json(const std::string& text);

// One non-negative value per solver step, whitespace separated.
std::vector<double> read_schedule(const std::filesystem::path& path);

}  // namespace sfm::io
