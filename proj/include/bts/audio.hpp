#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <numbers>
#include <string>
#include <vector>

#include "bts/common.hpp"
#include "bts/types.hpp"
#include "bts/wav.hpp"

namespace bts {

constexpr int kTargetSampleRate = 48000;
constexpr double kTargetDurationS = 8.0;
// 8 s at 48 kHz, the shape every encoder input must have
constexpr std::size_t kStandardSampleCount = 384000;

struct WaveSegment {
  std::vector<float> samples;  // amplitude in [-1, 1]
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }
};

inline WaveSegment segment_from_wav(const WavData& wav) {
  return {mixdown(wav.samples, wav.channels), wav.sample_rate};
}

inline WaveSegment load_recording(const std::string& path) {
  return segment_from_wav(read_wav(path));
}

// Cuts the samples in [start_s, end_s) out of a recording. The end may
// overshoot the recording and is clamped; a start at or past the end of the
// recording is an error.
inline WaveSegment extract_cycle(const WaveSegment& recording,
                                 const CycleAnnotation& ann) {
  const auto n = static_cast<std::int64_t>(recording.samples.size());
  const int rate = recording.sample_rate;
  if (rate <= 0) fail(ErrorCode::InvalidRate, "recording has no sample rate");
  if (ann.start_s < 0.0) {
    fail(ErrorCode::OutOfBounds, "cycle start is negative");
  }
  std::int64_t start = std::llround(ann.start_s * rate);
  std::int64_t end = std::llround(ann.end_s * rate);
  if (start >= n) {
    fail(ErrorCode::OutOfBounds,
         "cycle start " + format_fixed(ann.start_s, 3) + " s beyond recording end " +
             format_fixed(recording.duration_s(), 3) + " s");
  }
  if (end > n) end = n;
  if (end <= start) {
    fail(ErrorCode::OutOfBounds, "cycle collapses to an empty span");
  }
  WaveSegment out;
  out.sample_rate = rate;
  out.samples.assign(recording.samples.begin() + start,
                     recording.samples.begin() + end);
  return out;
}

enum class PaddingMode { Cyclic, Zero };

// Fixes the duration at the segment's own rate: truncate when longer,
// pad when shorter. Cyclic repetition (out[k] = in[k mod n]) is the default;
// zero padding sits behind the switch for ablations.
inline WaveSegment standardize_duration(const WaveSegment& seg,
                                        double target_s = kTargetDurationS,
                                        PaddingMode padding = PaddingMode::Cyclic) {
  if (seg.samples.empty()) fail(ErrorCode::EmptySegment, "cannot standardize an empty segment");
  if (seg.sample_rate <= 0) fail(ErrorCode::InvalidRate, "segment has no sample rate");
  const auto n = seg.samples.size();
  const auto target =
      static_cast<std::size_t>(std::llround(target_s * seg.sample_rate));
  if (n == target) return seg;

  WaveSegment out;
  out.sample_rate = seg.sample_rate;
  out.samples.resize(target);
  if (n > target) {
    std::copy_n(seg.samples.begin(), target, out.samples.begin());
  } else if (padding == PaddingMode::Cyclic) {
    for (std::size_t k = 0; k < target; ++k) out.samples[k] = seg.samples[k % n];
  } else {
    std::copy(seg.samples.begin(), seg.samples.end(), out.samples.begin());
    std::fill(out.samples.begin() + static_cast<std::ptrdiff_t>(n),
              out.samples.end(), 0.0f);
  }
  return out;
}

namespace detail {

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Blackman window on [-1, 1]
inline double blackman(double x) {
  if (x < -1.0 || x > 1.0) return 0.0;
  return 0.42 + 0.5 * std::cos(std::numbers::pi * x) +
         0.08 * std::cos(2.0 * std::numbers::pi * x);
}

}  // namespace detail

// Band-limited rate conversion with a Blackman-windowed sinc kernel
// (taps >= 64 per output sample). Kernel weights are renormalized per output
// sample, which pins DC gain at 1 and removes edge attenuation. Equal rates
// pass through bit-identically.
//
// The ratio p/q is rational, so kernel weights repeat every p output samples;
// they are tabulated per phase once instead of re-evaluating the windowed
// sinc tens of millions of times.
inline WaveSegment resample(const WaveSegment& seg,
                            int target_rate = kTargetSampleRate, int taps = 64) {
  if (seg.sample_rate < 1) fail(ErrorCode::InvalidRate, "source rate must be >= 1");
  if (target_rate < 1) fail(ErrorCode::InvalidRate, "target rate must be >= 1");
  if (taps < 8) fail(ErrorCode::InvalidRate, "kernel too short");
  if (seg.samples.empty()) fail(ErrorCode::EmptySegment, "cannot resample an empty segment");
  if (target_rate == seg.sample_rate) return seg;

  const auto in_len = static_cast<std::int64_t>(seg.samples.size());
  const double ratio = static_cast<double>(target_rate) / seg.sample_rate;
  const auto out_len = static_cast<std::int64_t>(std::llround(in_len * ratio));

  // cutoff relative to the source Nyquist; below 1 only when decimating
  const double cutoff = ratio < 1.0 ? ratio : 1.0;
  const double half_width = (taps / 2) / cutoff;

  const std::int64_t g = std::gcd(target_rate, seg.sample_rate);
  const std::int64_t p = target_rate / g;        // phase count
  const std::int64_t q = seg.sample_rate / g;    // input step per p outputs

  WaveSegment out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));

  // nearly-coprime rate pairs would need an oversized table; evaluate the
  // kernel directly instead
  if (p > 8192) {
    for (std::int64_t j = 0; j < out_len; ++j) {
      const double t = static_cast<double>(j) / ratio;
      auto lo = static_cast<std::int64_t>(std::ceil(t - half_width));
      auto hi = static_cast<std::int64_t>(std::floor(t + half_width));
      double acc = 0.0, wsum = 0.0;
      for (std::int64_t i = lo; i <= hi; ++i) {
        const double u = t - static_cast<double>(i);
        const double w =
            cutoff * detail::sinc(cutoff * u) * detail::blackman(u / half_width);
        wsum += w;
        if (i >= 0 && i < in_len) acc += w * seg.samples[static_cast<std::size_t>(i)];
      }
      out.samples[static_cast<std::size_t>(j)] =
          wsum != 0.0 ? static_cast<float>(acc / wsum) : 0.0f;
    }
    return out;
  }

  // per-phase tap weights for input positions t = k + r/p
  struct Phase {
    std::int64_t lo_rel;
    std::vector<double> weights;
    double wsum;
  };
  std::vector<Phase> phases(static_cast<std::size_t>(p));
  for (std::int64_t r = 0; r < p; ++r) {
    const double frac = static_cast<double>(r) / static_cast<double>(p);
    Phase& ph = phases[static_cast<std::size_t>(r)];
    ph.lo_rel = static_cast<std::int64_t>(std::ceil(frac - half_width));
    const auto hi_rel = static_cast<std::int64_t>(std::floor(frac + half_width));
    ph.wsum = 0.0;
    ph.weights.reserve(static_cast<std::size_t>(hi_rel - ph.lo_rel + 1));
    for (std::int64_t rel = ph.lo_rel; rel <= hi_rel; ++rel) {
      const double u = frac - static_cast<double>(rel);
      const double w =
          cutoff * detail::sinc(cutoff * u) * detail::blackman(u / half_width);
      ph.weights.push_back(w);
      ph.wsum += w;
    }
  }

  for (std::int64_t j = 0; j < out_len; ++j) {
    const std::int64_t pos = j * q;
    const std::int64_t k = pos / p;
    const Phase& ph = phases[static_cast<std::size_t>(pos % p)];
    double acc = 0.0;
    std::int64_t i = k + ph.lo_rel;
    for (double w : ph.weights) {
      if (i >= 0 && i < in_len) acc += w * seg.samples[static_cast<std::size_t>(i)];
      ++i;
    }
    out.samples[static_cast<std::size_t>(j)] =
        ph.wsum != 0.0 ? static_cast<float>(acc / ph.wsum) : 0.0f;
  }
  return out;
}

struct PrepParams {
  double target_s = kTargetDurationS;
  int target_rate = kTargetSampleRate;
  PaddingMode padding = PaddingMode::Cyclic;
  int taps = 64;

  std::string cache_tag() const {
    return "target_s=" + format_fixed(target_s, 6) +
           ";target_rate=" + std::to_string(target_rate) +
           ";padding=" + (padding == PaddingMode::Cyclic ? "cyclic" : "zero") +
           ";taps=" + std::to_string(taps);
  }
};

// extract -> standardize duration -> resample. Duration standardization runs
// at the native rate first; the result is always target_s * target_rate
// samples (384,000 with the defaults).
inline WaveSegment preprocess_cycle(const WaveSegment& recording,
                                    const CycleAnnotation& ann,
                                    const PrepParams& params = {}) {
  WaveSegment cycle = extract_cycle(recording, ann);
  WaveSegment fixed = standardize_duration(cycle, params.target_s, params.padding);
  return resample(fixed, params.target_rate, params.taps);
}

inline std::uint64_t segment_content_hash(const WaveSegment& seg) {
  std::uint64_t h = fnv1a64(seg.samples.data(), seg.samples.size() * sizeof(float));
  std::int64_t rate = seg.sample_rate;
  return fnv1a64(&rate, sizeof(rate), h);
}

}  // namespace bts
