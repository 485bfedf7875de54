#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bts {

// Error categories surfaced by the library. The CLI prints the category
// name verbatim so callers can match on it.
enum class ErrorCode {
  // ingestion
  MalformedFilename,
  UnknownCode,
  MalformedRow,
  NonMonotoneInterval,
  DuplicatePatient,
  UnparsableRow,
  InvalidAge,
  MissingAnnotation,
  MissingDemographics,
  SplitMismatch,
  // audio preprocessing
  OutOfBounds,
  EmptySegment,
  InvalidRate,
  UnsupportedWav,
  // text generation
  MissingAttribute,
  MissingBmi,
  // model
  TokenBudgetExceeded,
  EncoderFailure,
  ShapeMismatch,
  DimensionMismatch,
  InvalidLabel,
  CheckpointNotFound,
  CheckpointIncompatible,
  // training / evaluation
  DivergedLoss,
  GradientCheckFailed,
  EmptyClass,
  MissingReport,
  InvalidConfig,
  IoError,
};

inline std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::MalformedFilename: return "MalformedFilename";
    case ErrorCode::UnknownCode: return "UnknownCode";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::NonMonotoneInterval: return "NonMonotoneInterval";
    case ErrorCode::DuplicatePatient: return "DuplicatePatient";
    case ErrorCode::UnparsableRow: return "UnparsableRow";
    case ErrorCode::InvalidAge: return "InvalidAge";
    case ErrorCode::MissingAnnotation: return "MissingAnnotation";
    case ErrorCode::MissingDemographics: return "MissingDemographics";
    case ErrorCode::SplitMismatch: return "SplitMismatch";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::UnsupportedWav: return "UnsupportedWav";
    case ErrorCode::MissingAttribute: return "MissingAttribute";
    case ErrorCode::MissingBmi: return "MissingBmi";
    case ErrorCode::TokenBudgetExceeded: return "TokenBudgetExceeded";
    case ErrorCode::EncoderFailure: return "EncoderFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::CheckpointNotFound: return "CheckpointNotFound";
    case ErrorCode::CheckpointIncompatible: return "CheckpointIncompatible";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::GradientCheckFailed: return "GradientCheckFailed";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::MissingReport: return "MissingReport";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

// --- deterministic hashing -------------------------------------------------

// FNV-1a, 64-bit. Stable across platforms; used for config/run naming and
// cache keys, never for security.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
  return fnv1a64(
      std::string_view(static_cast<const char*>(data), n), h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// --- deterministic randomness ----------------------------------------------

// splitmix64. The standard <random> distributions are
// implementation-defined, so every seeded draw in the library goes through
// this generator to keep runs bit-reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from (seed, tag); used to give each
// consumer (init, shuffle, scenario draw, ...) its own generator.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  return fnv1a64(tag, seed ^ kFnvOffset) ^ 0x9e3779b97f4a7c15ULL;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 rng(seed ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
  return rng.next();
}

// --- formatting -------------------------------------------------------------

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace bts
