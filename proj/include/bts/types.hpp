#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "bts/common.hpp"

namespace bts {

// Four-class respiratory cycle label, fixed order everywhere (confusion
// matrices, classifier head, reports).
enum class LungSound : int { Normal = 0, Crackle = 1, Wheeze = 2, Both = 3 };
constexpr int kNumClasses = 4;

enum class ChestLocation : int {
  Trachea,
  LeftAnterior,
  RightAnterior,
  LeftPosterior,
  RightPosterior,
  LeftLateral,
  RightLateral,
};
constexpr int kNumLocations = 7;

enum class AcquisitionMode : int { SingleChannel, MultiChannel };

enum class Stethoscope : int { Meditron, LittC2SE, Litt3200, AKGC417L };
constexpr int kNumDevices = 4;

enum class AgeGroup : int { Adult, Pediatric };
enum class Sex : int { Male, Female };
enum class Split : int { Train, Test };

// (crackle, wheeze) <-> label is a bijection over the four flag pairs.
inline LungSound label_from_flags(bool crackle, bool wheeze) {
  if (crackle && wheeze) return LungSound::Both;
  if (crackle) return LungSound::Crackle;
  if (wheeze) return LungSound::Wheeze;
  return LungSound::Normal;
}

inline std::pair<bool, bool> flags_from_label(LungSound label) {
  switch (label) {
    case LungSound::Normal: return {false, false};
    case LungSound::Crackle: return {true, false};
    case LungSound::Wheeze: return {false, true};
    case LungSound::Both: return {true, true};
  }
  fail(ErrorCode::InvalidLabel, "label out of range");
}

// --- canonical names (manifest serialization, reports) ----------------------

inline std::string_view to_string(LungSound v) {
  switch (v) {
    case LungSound::Normal: return "Normal";
    case LungSound::Crackle: return "Crackle";
    case LungSound::Wheeze: return "Wheeze";
    case LungSound::Both: return "Both";
  }
  return "?";
}

inline std::string_view to_string(ChestLocation v) {
  switch (v) {
    case ChestLocation::Trachea: return "Trachea";
    case ChestLocation::LeftAnterior: return "LeftAnterior";
    case ChestLocation::RightAnterior: return "RightAnterior";
    case ChestLocation::LeftPosterior: return "LeftPosterior";
    case ChestLocation::RightPosterior: return "RightPosterior";
    case ChestLocation::LeftLateral: return "LeftLateral";
    case ChestLocation::RightLateral: return "RightLateral";
  }
  return "?";
}

inline std::string_view to_string(AcquisitionMode v) {
  return v == AcquisitionMode::SingleChannel ? "sc" : "mc";
}

inline std::string_view to_string(Stethoscope v) {
  switch (v) {
    case Stethoscope::Meditron: return "Meditron";
    case Stethoscope::LittC2SE: return "LittC2SE";
    case Stethoscope::Litt3200: return "Litt3200";
    case Stethoscope::AKGC417L: return "AKGC417L";
  }
  return "?";
}

inline std::string_view to_string(AgeGroup v) {
  return v == AgeGroup::Adult ? "Adult" : "Pediatric";
}

inline std::string_view to_string(Sex v) {
  return v == Sex::Male ? "Male" : "Female";
}

inline std::string_view to_string(Split v) {
  return v == Split::Train ? "train" : "test";
}

template <typename Enum>
std::optional<Enum> enum_from_string(std::string_view s, int count) {
  for (int i = 0; i < count; ++i) {
    if (to_string(static_cast<Enum>(i)) == s) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

// --- ICBHI filename codes ----------------------------------------------------

inline std::optional<ChestLocation> location_from_code(std::string_view code) {
  if (code == "Tc") return ChestLocation::Trachea;
  if (code == "Al") return ChestLocation::LeftAnterior;
  if (code == "Ar") return ChestLocation::RightAnterior;
  if (code == "Pl") return ChestLocation::LeftPosterior;
  if (code == "Pr") return ChestLocation::RightPosterior;
  if (code == "Ll") return ChestLocation::LeftLateral;
  if (code == "Lr") return ChestLocation::RightLateral;
  return std::nullopt;
}

inline std::string_view location_code(ChestLocation loc) {
  switch (loc) {
    case ChestLocation::Trachea: return "Tc";
    case ChestLocation::LeftAnterior: return "Al";
    case ChestLocation::RightAnterior: return "Ar";
    case ChestLocation::LeftPosterior: return "Pl";
    case ChestLocation::RightPosterior: return "Pr";
    case ChestLocation::LeftLateral: return "Ll";
    case ChestLocation::RightLateral: return "Lr";
  }
  return "?";
}

inline std::optional<AcquisitionMode> mode_from_code(std::string_view code) {
  if (code == "sc") return AcquisitionMode::SingleChannel;
  if (code == "mc") return AcquisitionMode::MultiChannel;
  return std::nullopt;
}

inline std::optional<Stethoscope> device_from_name(std::string_view name) {
  if (name == "Meditron") return Stethoscope::Meditron;
  if (name == "LittC2SE") return Stethoscope::LittC2SE;
  if (name == "Litt3200") return Stethoscope::Litt3200;
  if (name == "AKGC417L") return Stethoscope::AKGC417L;
  return std::nullopt;
}

// --- domain records ----------------------------------------------------------

// Per-recording metadata after all joins (filename fields + demographics +
// split assignment).
struct RecordingMeta {
  int patient_id = 0;
  std::string recording_index;
  ChestLocation location = ChestLocation::Trachea;
  AcquisitionMode acquisition_mode = AcquisitionMode::SingleChannel;
  Stethoscope device = Stethoscope::Meditron;
  AgeGroup age_group = AgeGroup::Adult;
  Sex sex = Sex::Male;
  std::optional<double> bmi;  // kg/m^2
  Split split = Split::Train;
};

// One annotated respiratory cycle; end_s > start_s is enforced at parse time.
struct CycleAnnotation {
  double start_s = 0.0;
  double end_s = 0.0;
  bool crackle = false;
  bool wheeze = false;

  LungSound label() const { return label_from_flags(crackle, wheeze); }
};

// Official per-class cycle counts of the ICBHI 60/40 split, order
// [Normal, Crackle, Wheeze, Both].
constexpr std::array<long long, kNumClasses> kOfficialTrainCounts = {2063, 1215,
                                                                     501, 363};
constexpr std::array<long long, kNumClasses> kOfficialTestCounts = {1579, 649,
                                                                    385, 143};
constexpr long long kOfficialTrainTotal = 4142;
constexpr long long kOfficialTestTotal = 2756;

}  // namespace bts
