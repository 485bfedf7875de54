#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bts/common.hpp"

namespace bts {

// Decoded PCM audio, samples normalized to [-1, 1], channel-interleaved.
struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
  int channels = 0;

  std::size_t frames() const {
    return channels > 0 ? samples.size() / channels : 0;
  }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// Reads a RIFF/WAVE file. Supports integer PCM (8/16/24/32 bit), IEEE float
// (32/64 bit) and the WAVE_FORMAT_EXTENSIBLE wrappers around either.
inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::UnsupportedWav, "not a RIFF/WAVE file: " + path);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = detail::read_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      chunk_len = static_cast<std::uint32_t>(bytes.size() - pos - 8);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = detail::read_u16(body);
      channels = detail::read_u16(body + 2);
      rate = detail::read_u32(body + 4);
      bits = detail::read_u16(body + 14);
      if (format == 0xFFFE && chunk_len >= 40) {
        // extensible: actual format tag is the first two bytes of the GUID
        format = detail::read_u16(body + 24);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (rate == 0 || channels == 0) {
    fail(ErrorCode::UnsupportedWav, "missing fmt chunk: " + path);
  }
  if (data == nullptr) fail(ErrorCode::UnsupportedWav, "missing data chunk: " + path);

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  out.channels = static_cast<int>(channels);

  auto push_all = [&](auto decode, std::size_t stride) {
    std::size_t n = data_len / stride;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = decode(data + i * stride);
  };

  if (format == 1) {  // integer PCM
    switch (bits) {
      case 8:
        push_all([](const unsigned char* p) { return (static_cast<int>(*p) - 128) / 128.0f; }, 1);
        break;
      case 16:
        push_all(
            [](const unsigned char* p) {
              std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
              return static_cast<float>(v) / 32768.0f;
            },
            2);
        break;
      case 24:
        push_all(
            [](const unsigned char* p) {
              std::uint32_t u = (static_cast<std::uint32_t>(p[0]) << 8) |
                                (static_cast<std::uint32_t>(p[1]) << 16) |
                                (static_cast<std::uint32_t>(p[2]) << 24);
              return static_cast<float>(static_cast<std::int32_t>(u) / 256) /
                     8388608.0f;
            },
            3);
        break;
      case 32:
        push_all(
            [](const unsigned char* p) {
              std::int32_t v = static_cast<std::int32_t>(detail::read_u32(p));
              return static_cast<float>(v) / 2147483648.0f;
            },
            4);
        break;
      default:
        fail(ErrorCode::UnsupportedWav,
             "unsupported PCM bit depth " + std::to_string(bits) + ": " + path);
    }
  } else if (format == 3) {  // IEEE float
    if (bits == 32) {
      push_all(
          [](const unsigned char* p) {
            float f;
            std::memcpy(&f, p, 4);
            return f;
          },
          4);
    } else if (bits == 64) {
      push_all(
          [](const unsigned char* p) {
            double d;
            std::memcpy(&d, p, 8);
            return static_cast<float>(d);
          },
          8);
    } else {
      fail(ErrorCode::UnsupportedWav,
           "unsupported float bit depth " + std::to_string(bits) + ": " + path);
    }
  } else {
    fail(ErrorCode::UnsupportedWav,
         "unsupported format tag " + std::to_string(format) + ": " + path);
  }
  return out;
}

// Averages interleaved channels into a mono signal.
inline std::vector<float> mixdown(const std::vector<float>& interleaved,
                                  int channels) {
  if (channels <= 0) fail(ErrorCode::UnsupportedWav, "channel count must be positive");
  if (channels == 1) return interleaved;
  std::size_t frames = interleaved.size() / static_cast<std::size_t>(channels);
  std::vector<float> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
    mono[i] = static_cast<float>(acc / channels);
  }
  return mono;
}

// Writes mono 16-bit PCM; used by fixtures and the segment cache export.
inline void write_wav_pcm16(const std::string& path,
                            const std::vector<float>& mono, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write wav file: " + path);

  auto u16 = [&](std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  auto u32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };

  std::uint32_t data_len = static_cast<std::uint32_t>(mono.size() * 2);
  out.write("RIFF", 4);
  u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate) * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_len);
  for (float s : mono) {
    double clamped = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : static_cast<double>(s));
    long v = std::lround(clamped * 32768.0);
    if (v > 32767) v = 32767;
    if (v < -32768) v = -32768;
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
}

}  // namespace bts
