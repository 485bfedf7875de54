#pragma once

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "bts/common.hpp"
#include "bts/types.hpp"

namespace bts {

constexpr int kTokenBudget = 64;
constexpr const char* kNoDescriptionText = "No description.";
constexpr double kPartialMetadataProb = 0.10;

// Which metadata attributes a description draws from. All four by default.
struct AttributeSubset {
  bool include_age = true;
  bool include_sex = true;
  bool include_loc = true;
  bool include_dev = true;

  static AttributeSubset all() { return {}; }
  static AttributeSubset none() { return {false, false, false, false}; }

  bool any() const { return include_age || include_sex || include_loc || include_dev; }

  int count() const {
    return static_cast<int>(include_age) + static_cast<int>(include_sex) +
           static_cast<int>(include_loc) + static_cast<int>(include_dev);
  }

  bool operator==(const AttributeSubset&) const = default;

  // compact name for configs and reports, e.g. "age-sex-loc-dev"
  std::string name() const {
    if (!any()) return "none";
    std::string out;
    auto add = [&](bool on, std::string_view part) {
      if (!on) return;
      if (!out.empty()) out += '-';
      out += part;
    };
    add(include_age, "age");
    add(include_sex, "sex");
    add(include_loc, "loc");
    add(include_dev, "dev");
    return out;
  }

  static std::optional<AttributeSubset> from_name(std::string_view name) {
    if (name == "all") return all();
    if (name == "none") return none();
    AttributeSubset s = none();
    std::size_t start = 0;
    while (start <= name.size()) {
      std::size_t pos = name.find('-', start);
      std::string_view part = name.substr(
          start, pos == std::string_view::npos ? name.size() - start : pos - start);
      if (part == "age") {
        s.include_age = true;
      } else if (part == "sex") {
        s.include_sex = true;
      } else if (part == "loc") {
        s.include_loc = true;
      } else if (part == "dev") {
        s.include_dev = true;
      } else {
        return std::nullopt;
      }
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return s;
  }
};

enum class Scenario { Standard, BmiInjected, PartialMetadata, NoMetadata };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Standard: return "standard";
    case Scenario::BmiInjected: return "bmi";
    case Scenario::PartialMetadata: return "partial";
    case Scenario::NoMetadata: return "nometa";
  }
  return "?";
}

inline std::optional<Scenario> scenario_from_string(std::string_view s) {
  if (s == "standard") return Scenario::Standard;
  if (s == "bmi") return Scenario::BmiInjected;
  if (s == "partial") return Scenario::PartialMetadata;
  if (s == "nometa") return Scenario::NoMetadata;
  return std::nullopt;
}

struct TextDescription {
  std::string text;
  AttributeSubset source_subset;
  Scenario scenario = Scenario::Standard;
};

// Attribute values available for a description; any of them may be absent
// when describing partial metadata.
struct MetaAttributes {
  std::optional<AgeGroup> age;
  std::optional<Sex> sex;
  std::optional<ChestLocation> location;
  std::optional<Stethoscope> device;

  static MetaAttributes from(const RecordingMeta& meta) {
    return {meta.age_group, meta.sex, meta.location, meta.device};
  }
};

// --- surface forms ------------------------------------------------------------

inline std::string_view age_word(AgeGroup a) {
  return a == AgeGroup::Adult ? "adult" : "pediatric";
}

inline std::string_view sex_word(Sex s) {
  return s == Sex::Male ? "male" : "female";
}

inline std::string_view location_phrase(ChestLocation loc) {
  switch (loc) {
    case ChestLocation::Trachea: return "the trachea";
    case ChestLocation::LeftAnterior: return "the left anterior chest";
    case ChestLocation::RightAnterior: return "the right anterior chest";
    case ChestLocation::LeftPosterior: return "the left posterior chest";
    case ChestLocation::RightPosterior: return "the right posterior chest";
    case ChestLocation::LeftLateral: return "the left lateral chest";
    case ChestLocation::RightLateral: return "the right lateral chest";
  }
  return "?";
}

inline std::string_view device_word(Stethoscope d) { return to_string(d); }

// "a"/"an" keyed on the leading letter of the following word.
inline std::string_view indefinite_article(std::string_view following) {
  if (following.empty()) return "a";
  switch (std::tolower(static_cast<unsigned char>(following.front()))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return "an";
    default: return "a";
  }
}

namespace detail {

// Fully resolved slot strings; scenario transforms override individual slots
// (e.g. with "Unknown") before rendering.
struct SurfaceValues {
  std::optional<std::string> age;
  std::optional<std::string> sex;
  std::optional<std::string> loc;  // includes its article: "the trachea"
  std::optional<std::string> dev;
};

inline SurfaceValues resolve_surfaces(const MetaAttributes& meta,
                                      const AttributeSubset& subset) {
  SurfaceValues v;
  if (subset.include_age) {
    if (!meta.age) fail(ErrorCode::MissingAttribute, "age requested but absent");
    v.age = std::string(age_word(*meta.age));
  }
  if (subset.include_sex) {
    if (!meta.sex) fail(ErrorCode::MissingAttribute, "sex requested but absent");
    v.sex = std::string(sex_word(*meta.sex));
  }
  if (subset.include_loc) {
    if (!meta.location) fail(ErrorCode::MissingAttribute, "location requested but absent");
    v.loc = std::string(location_phrase(*meta.location));
  }
  if (subset.include_dev) {
    if (!meta.device) fail(ErrorCode::MissingAttribute, "device requested but absent");
    v.dev = std::string(device_word(*meta.device));
  }
  return v;
}

// The sentence grammar. Lone demographic attributes render as
// "This patient is a(n) ... patient."; as soon as the recording context
// (location or device) participates, everything folds into the single
// "This sound was recorded ..." sentence with absent parts elided.
inline std::string render_description(const SurfaceValues& v) {
  std::string patient;
  if (v.age) patient = *v.age;
  if (v.sex) {
    if (!patient.empty()) patient += ' ';
    patient += *v.sex;
  }

  if (v.loc || v.dev) {
    std::string s = "This sound was recorded";
    if (v.loc) {
      s += " from ";
      s += *v.loc;
    }
    if (!patient.empty()) {
      s += v.loc ? " of " : " from ";
      s += indefinite_article(patient);
      s += ' ';
      s += patient;
      s += " patient";
    }
    if (v.dev) {
      if (v.loc || !patient.empty()) {
        s += ", using ";
      } else {
        s += " with ";
      }
      s += indefinite_article(*v.dev);
      s += ' ';
      s += *v.dev;
      s += " stethoscope";
    }
    s += '.';
    return s;
  }

  if (patient.empty()) {
    fail(ErrorCode::MissingAttribute, "cannot describe an empty attribute subset");
  }
  std::string s = "This patient is ";
  s += indefinite_article(patient);
  s += ' ';
  s += patient;
  s += " patient.";
  return s;
}

}  // namespace detail

// Deterministic free-text rendering of the requested attribute subset.
inline TextDescription describe(const MetaAttributes& meta,
                                const AttributeSubset& subset = {}) {
  TextDescription d;
  d.text = detail::render_description(detail::resolve_surfaces(meta, subset));
  d.source_subset = subset;
  d.scenario = Scenario::Standard;
  return d;
}

inline TextDescription describe(const RecordingMeta& meta,
                                const AttributeSubset& subset = {}) {
  return describe(MetaAttributes::from(meta), subset);
}

// Counts words plus standalone punctuation marks; the proxy for the
// encoder's 64-token input budget.
inline int token_count(std::string_view text) {
  int count = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      if (!in_word) {
        ++count;
        in_word = true;
      }
    } else {
      in_word = false;
      if (!std::isspace(c)) ++count;  // punctuation is its own token
    }
  }
  return count;
}

// Every description renderable from the grammar, over all non-empty
// attribute subsets and attribute values.
inline std::set<std::string> enumerate_descriptions() {
  std::set<std::string> out;
  for (int mask = 1; mask < 16; ++mask) {
    AttributeSubset subset{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0,
                           (mask & 8) != 0};
    int na = subset.include_age ? 2 : 1;
    int ns = subset.include_sex ? 2 : 1;
    int nl = subset.include_loc ? kNumLocations : 1;
    int nd = subset.include_dev ? kNumDevices : 1;
    for (int a = 0; a < na; ++a) {
      for (int s = 0; s < ns; ++s) {
        for (int l = 0; l < nl; ++l) {
          for (int d = 0; d < nd; ++d) {
            MetaAttributes meta;
            if (subset.include_age) meta.age = static_cast<AgeGroup>(a);
            if (subset.include_sex) meta.sex = static_cast<Sex>(s);
            if (subset.include_loc) meta.location = static_cast<ChestLocation>(l);
            if (subset.include_dev) meta.device = static_cast<Stethoscope>(d);
            out.insert(describe(meta, subset).text);
          }
        }
      }
    }
  }
  return out;
}

// Test-time transforms over a rendered description. PartialMetadata redraws
// from `seed` only; callers give every sample its own derived seed so the
// draws are independent and order-insensitive.
inline TextDescription apply_scenario(const TextDescription& desc,
                                      const RecordingMeta& meta,
                                      Scenario scenario, std::uint64_t seed) {
  TextDescription out = desc;
  out.scenario = scenario;
  switch (scenario) {
    case Scenario::Standard:
      return out;

    case Scenario::BmiInjected: {
      if (!meta.bmi) {
        fail(ErrorCode::MissingBmi,
             "BMI injection requested for patient " +
                 std::to_string(meta.patient_id) + " without derivable BMI");
      }
      out.text += " The BMI of the patient was " + format_fixed(*meta.bmi, 2) + ".";
      return out;
    }

    case Scenario::PartialMetadata: {
      SplitMix64 rng(seed);
      if (rng.next_double() >= kPartialMetadataProb) return out;
      auto surfaces = detail::resolve_surfaces(MetaAttributes::from(meta),
                                               desc.source_subset);
      std::vector<std::optional<std::string>*> slots;
      if (surfaces.age) slots.push_back(&surfaces.age);
      if (surfaces.sex) slots.push_back(&surfaces.sex);
      if (surfaces.loc) slots.push_back(&surfaces.loc);
      if (surfaces.dev) slots.push_back(&surfaces.dev);
      if (slots.empty()) return out;
      *slots[rng.next_below(slots.size())] = "Unknown";
      out.text = detail::render_description(surfaces);
      return out;
    }

    case Scenario::NoMetadata:
      out.text = kNoDescriptionText;
      out.source_subset = AttributeSubset::none();
      return out;
  }
  return out;
}

}  // namespace bts
