#include "sfm/io/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "sfm/error.hpp"

namespace sfm::io {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T load(const std::vector<char>& buf, std::size_t off) {
  if (off + sizeof(T) > buf.size()) throw FormatError("WAV: truncated header");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <class T>
void store(std::vector<char>& buf, T v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError("'" + path.string() + "' is not a RIFF/WAVE file");

  std::uint16_t fmt_tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t off = 12;
  while (off + 8 <= buf.size()) {
    const std::string id(buf.data() + off, 4);
    const auto len = load<std::uint32_t>(buf, off + 4);
    const std::size_t body = off + 8;
    if (id == "fmt ") {
      fmt_tag = load<std::uint16_t>(buf, body);
      channels = load<std::uint16_t>(buf, body + 2);
      rate = load<std::uint32_t>(buf, body + 4);
      bits = load<std::uint16_t>(buf, body + 14);
      if (fmt_tag == kFormatExtensible && len >= 26) fmt_tag = load<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data = buf.data() + body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
    }
    off = body + len + (len & 1);
  }
  if (!have_fmt || !data) throw FormatError("WAV '" + path.string() + "' lacks fmt or data chunk");
  if (channels != 1)
    throw FormatError("WAV '" + path.string() + "' has " + std::to_string(channels) +
                      " channels; only mono is supported");

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  if (fmt_tag == kFormatPcm && bits == 16) {
    out.format = WavFormat::Pcm16;
    const std::size_t n = data_len / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v;
      std::memcpy(&v, data + 2 * i, 2);
      out.samples[i] = v / 32768.0;
    }
  } else if (fmt_tag == kFormatFloat && bits == 32) {
    out.format = WavFormat::Float32;
    const std::size_t n = data_len / 4;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, data + 4 * i, 4);
      out.samples[i] = v;
    }
  } else {
    throw FormatError("WAV '" + path.string() + "': unsupported encoding (format " + std::to_string(fmt_tag) +
                      ", " + std::to_string(bits) + " bits)");
  }
  return out;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate,
               WavFormat format) {
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint16_t block = bits / 8;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * block);
  std::vector<char> buf;
  buf.reserve(44 + data_len);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  store<std::uint32_t>(buf, 36 + data_len);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  store<std::uint32_t>(buf, 16);
  store<std::uint16_t>(buf, format == WavFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  store<std::uint16_t>(buf, 1);
  store<std::uint32_t>(buf, static_cast<std::uint32_t>(sample_rate));
  store<std::uint32_t>(buf, static_cast<std::uint32_t>(sample_rate) * block);
  store<std::uint16_t>(buf, block);
  store<std::uint16_t>(buf, bits);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  store<std::uint32_t>(buf, data_len);
  for (double s : samples) {
    if (format == WavFormat::Pcm16) {
      const double c = std::clamp(s, -1.0, 1.0);
      store<std::int16_t>(buf, static_cast<std::int16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L)));
    } else {
      store<float>(buf, static_cast<float>(s));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write WAV file '" + path.string() + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace sfm::io
