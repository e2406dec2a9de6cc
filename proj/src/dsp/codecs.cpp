#include <algorithm>
#include <atomic>
#include <cmath>

#include "vcwn/binary_io.hpp"
#include "vcwn/dsp.hpp"
#include "vcwn/error.hpp"

namespace vcwn {

namespace {
std::atomic<std::size_t> g_clamped{0};
}

int mu_law_encode(double x, int mu) {
  if (!(std::abs(x) <= 1.0)) {
    g_clamped.fetch_add(1, std::memory_order_relaxed);
    x = std::isnan(x) ? 0.0 : std::clamp(x, -1.0, 1.0);
  }
  const double levels = mu + 1.0;
  const double y = std::copysign(std::log1p(mu * std::abs(x)) / std::log1p(mu), x);
  const auto code = static_cast<int>(std::floor((y + 1.0) / 2.0 * levels));
  return std::clamp(code, 0, mu);
}

double mu_law_decode(int code, int mu) {
  require(code >= 0 && code <= mu, ErrorCode::kInvalidArgument,
          "mu_law_decode: code " + std::to_string(code) + " out of range");
  const double levels = mu + 1.0;
  const double y = (code + 0.5) / levels * 2.0 - 1.0;
  return std::copysign((std::pow(1.0 + mu, std::abs(y)) - 1.0) / mu, y);
}

std::size_t mu_law_clamp_count() { return g_clamped.load(std::memory_order_relaxed); }

// --- WAV --------------------------------------------------------------------

std::vector<char> encode_wav(const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const std::uint32_t data_bytes = n * 2;
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u8(1);  // PCM
  w.u8(0);
  w.u8(1);  // mono
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  w.u8(2);  // block align
  w.u8(0);
  w.u8(16);  // bits per sample
  w.u8(0);
  w.bytes("data");
  w.u32(data_bytes);
  for (double s : wave.samples) {
    const double c = std::isfinite(s) ? std::clamp(s, -1.0, 1.0) : 0.0;
    const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    const auto u = static_cast<std::uint16_t>(v);
    w.u8(static_cast<std::uint8_t>(u & 0xff));
    w.u8(static_cast<std::uint8_t>(u >> 8));
  }
  return w.buffer();
}

Waveform decode_wav(const std::vector<char>& bytes) {
  ByteReader r(bytes, "WAV");
  if (r.bytes(4) != "RIFF") fail(ErrorCode::kFormat, "WAV: missing RIFF header");
  r.u32();
  if (r.bytes(4) != "WAVE") fail(ErrorCode::kFormat, "WAV: missing WAVE tag");
  Waveform wave;
  bool have_fmt = false;
  while (true) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      const std::string body = r.bytes(size);
      ByteWriter tmp;
      tmp.bytes(body);
      ByteReader f(tmp.buffer(), "WAV fmt");
      const std::uint32_t format_channels = f.u32();
      const std::uint16_t format = format_channels & 0xffff;
      const std::uint16_t channels = format_channels >> 16;
      wave.sample_rate = static_cast<int>(f.u32());
      f.u32();
      const std::uint32_t align_bits = f.u32();
      const std::uint16_t bits = align_bits >> 16;
      if (format != 1 || channels != 1 || bits != 16)
        fail(ErrorCode::kFormat, "WAV: only 16-bit PCM mono is supported");
      have_fmt = true;
      if (size % 2) r.u8();
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorCode::kFormat, "WAV: data chunk before fmt chunk");
      const std::uint32_t count = size / 2;
      wave.samples.resize(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t lo = r.u8();
        const std::uint16_t hi = r.u8();
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        wave.samples[i] = std::max(-1.0, v / 32767.0);
      }
      return wave;
    } else {
      r.bytes(size + (size % 2));
    }
  }
}

void write_wav(const std::string& path, const Waveform& wave) {
  write_file_bytes(path, encode_wav(wave));
}

Waveform read_wav(const std::string& path) { return decode_wav(read_file_bytes(path)); }

// --- VCFT -------------------------------------------------------------------

namespace {
constexpr std::uint32_t kFeatureVersion = 1;
}

std::vector<char> encode_feature_track(const FeatureTrack& track) {
  track.validate();
  const auto frames = static_cast<std::uint32_t>(track.frames());
  ByteWriter w;
  w.bytes("VCFT");
  w.u32(kFeatureVersion);
  w.u32(frames);
  w.u32(static_cast<std::uint32_t>(kMccDim));
  w.f32(static_cast<float>(track.frame_shift_ms));
  w.u8(static_cast<std::uint8_t>(track.kind));
  for (double v : track.mcc) w.f32(static_cast<float>(v));
  for (double v : track.energy) w.f32(static_cast<float>(v));
  for (double v : track.log_f0) w.f32(static_cast<float>(v));
  for (std::uint8_t v : track.voiced) w.u8(v ? 1 : 0);
  return w.buffer();
}

FeatureTrack decode_feature_track(const std::vector<char>& bytes) {
  ByteReader r(bytes, "VCFT feature file");
  if (r.bytes(4) != "VCFT") fail(ErrorCode::kFormat, "not a VCFT feature file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion)
    fail(ErrorCode::kFormat, "unsupported VCFT version " + std::to_string(version));
  const std::uint32_t frames = r.u32();
  const std::uint32_t dims = r.u32();
  if (dims != kMccDim)
    fail(ErrorCode::kFormat, "VCFT: expected " + std::to_string(kMccDim) + " dims, got " +
                                 std::to_string(dims));
  FeatureTrack track;
  track.frame_shift_ms = r.f32();
  const std::uint8_t kind = r.u8();
  if (kind > 2) fail(ErrorCode::kFormat, "VCFT: unknown feature kind tag");
  track.kind = static_cast<FeatureKind>(kind);
  track.resize(frames);
  for (double& v : track.mcc) v = r.f32();
  for (double& v : track.energy) v = r.f32();
  for (double& v : track.log_f0) v = r.f32();
  for (std::uint8_t& v : track.voiced) v = r.u8();
  if (!r.at_end()) fail(ErrorCode::kFormat, "VCFT: trailing bytes");
  track.validate();
  return track;
}

void write_feature_track(const std::string& path, const FeatureTrack& track) {
  write_file_bytes(path, encode_feature_track(track));
}

FeatureTrack read_feature_track(const std::string& path) {
  return decode_feature_track(read_file_bytes(path));
}

}  // namespace vcwn
