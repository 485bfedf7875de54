#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bts/common.hpp"
#include "bts/types.hpp"

namespace bts {

// --- filename convention -----------------------------------------------------
//
// ICBHI recordings are named <patient>_<index>_<loc>_<mode>_<device>[.wav],
// e.g. 101_1b1_Al_sc_Meditron.wav.

struct FilenameFields {
  int patient_id = 0;
  std::string recording_index;
  ChestLocation location = ChestLocation::Trachea;
  AcquisitionMode acquisition_mode = AcquisitionMode::SingleChannel;
  Stethoscope device = Stethoscope::Meditron;
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

inline std::optional<int> parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

inline std::string strip_extension(const std::string& name) {
  auto dot = name.rfind('.');
  if (dot == std::string::npos) return name;
  return name.substr(0, dot);
}

}  // namespace detail

inline FilenameFields parse_filename(const std::string& name) {
  std::string stem = detail::strip_extension(name);
  auto fields = detail::split_on(stem, '_');
  if (fields.size() != 5) {
    fail(ErrorCode::MalformedFilename,
         "expected 5 underscore-delimited fields, got " +
             std::to_string(fields.size()) + " in '" + name + "'");
  }
  FilenameFields out;
  auto id = detail::parse_int(fields[0]);
  if (!id) {
    fail(ErrorCode::MalformedFilename,
         "patient id is not an integer in '" + name + "'");
  }
  out.patient_id = *id;
  out.recording_index = fields[1];
  auto loc = location_from_code(fields[2]);
  if (!loc) fail(ErrorCode::UnknownCode, "unknown location code '" + fields[2] + "'");
  out.location = *loc;
  auto mode = mode_from_code(fields[3]);
  if (!mode) fail(ErrorCode::UnknownCode, "unknown acquisition mode '" + fields[3] + "'");
  out.acquisition_mode = *mode;
  auto dev = device_from_name(fields[4]);
  if (!dev) fail(ErrorCode::UnknownCode, "unknown device '" + fields[4] + "'");
  out.device = *dev;
  return out;
}

// Inverse of parse_filename (stem only, no extension).
inline std::string render_filename(const FilenameFields& f) {
  std::string out = std::to_string(f.patient_id);
  out += '_';
  out += f.recording_index;
  out += '_';
  out += location_code(f.location);
  out += '_';
  out += to_string(f.acquisition_mode);
  out += '_';
  out += to_string(f.device);
  return out;
}

// --- annotation files ----------------------------------------------------------
//
// One line per respiratory cycle: start, end, crackle flag, wheeze flag.

inline std::vector<CycleAnnotation> parse_annotation(const std::string& text) {
  std::vector<CycleAnnotation> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    auto cols = detail::split_whitespace(line);
    if (cols.empty()) continue;  // blank lines tolerated
    if (cols.size() != 4) {
      fail(ErrorCode::MalformedRow, "line " + std::to_string(line_no) +
                                        ": expected 4 columns, got " +
                                        std::to_string(cols.size()));
    }
    auto start = detail::parse_double(cols[0]);
    auto end = detail::parse_double(cols[1]);
    if (!start || !end || *start < 0.0 || !std::isfinite(*start) ||
        !std::isfinite(*end)) {
      fail(ErrorCode::MalformedRow,
           "line " + std::to_string(line_no) + ": bad interval columns");
    }
    if (cols[2] != "0" && cols[2] != "1") {
      fail(ErrorCode::MalformedRow,
           "line " + std::to_string(line_no) + ": crackle flag must be 0 or 1");
    }
    if (cols[3] != "0" && cols[3] != "1") {
      fail(ErrorCode::MalformedRow,
           "line " + std::to_string(line_no) + ": wheeze flag must be 0 or 1");
    }
    if (*end <= *start) {
      fail(ErrorCode::NonMonotoneInterval,
           "line " + std::to_string(line_no) + ": end " + cols[1] +
               " <= start " + cols[0]);
    }
    out.push_back({*start, *end, cols[2] == "1", cols[3] == "1"});
  }
  return out;
}

// --- demographics --------------------------------------------------------------
//
// One row per patient: id, age (years), sex (M/F), adult BMI, child weight
// (kg), child height (cm). Trailing fields may be missing; NA tokens are
// "NA", "" and "-". Tab-separated files keep empty cells, whitespace-separated
// files may simply omit trailing columns.

struct DemographicRecord {
  double age_years = 0.0;
  Sex sex = Sex::Male;
  std::optional<double> adult_bmi;
  std::optional<double> child_weight_kg;
  std::optional<double> child_height_cm;
};

using Demographics = std::map<int, DemographicRecord>;

namespace detail {

inline bool is_na_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "-";
}

inline std::optional<double> parse_optional_field(const std::string& s,
                                                  int line_no) {
  if (is_na_token(s)) return std::nullopt;
  auto v = parse_double(s);
  if (!v) {
    fail(ErrorCode::UnparsableRow,
         "line " + std::to_string(line_no) + ": bad numeric field '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline Demographics parse_demographics(const std::string& text) {
  Demographics out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // tab-separated files keep empty cells in place; otherwise split on spaces
    std::vector<std::string> cols =
        line.find('\t') != std::string::npos ? detail::split_on(line, '\t')
                                             : detail::split_whitespace(line);
    if (cols.empty() || (cols.size() == 1 && cols[0].empty())) continue;
    if (cols.size() < 3 || cols.size() > 6) {
      fail(ErrorCode::UnparsableRow, "line " + std::to_string(line_no) +
                                         ": expected 3-6 columns, got " +
                                         std::to_string(cols.size()));
    }
    cols.resize(6);  // absent trailing columns read as NA
    auto id = detail::parse_int(cols[0]);
    if (!id) {
      fail(ErrorCode::UnparsableRow,
           "line " + std::to_string(line_no) + ": bad patient id '" + cols[0] + "'");
    }
    if (out.count(*id)) {
      fail(ErrorCode::DuplicatePatient,
           "patient " + std::to_string(*id) + " appears more than once");
    }
    DemographicRecord rec;
    auto age = detail::parse_double(cols[1]);
    if (!age) {
      fail(ErrorCode::UnparsableRow,
           "line " + std::to_string(line_no) + ": bad age '" + cols[1] + "'");
    }
    rec.age_years = *age;
    if (cols[2] == "M") {
      rec.sex = Sex::Male;
    } else if (cols[2] == "F") {
      rec.sex = Sex::Female;
    } else {
      fail(ErrorCode::UnparsableRow,
           "line " + std::to_string(line_no) + ": bad sex token '" + cols[2] + "'");
    }
    rec.adult_bmi = detail::parse_optional_field(cols[3], line_no);
    rec.child_weight_kg = detail::parse_optional_field(cols[4], line_no);
    rec.child_height_cm = detail::parse_optional_field(cols[5], line_no);
    out.emplace(*id, rec);
  }
  return out;
}

// BMI passthrough when recorded, otherwise weight / height^2 with height
// converted from centimeters. Absence is a value, not an error.
inline std::optional<double> derive_bmi(const DemographicRecord& rec) {
  if (rec.adult_bmi) return rec.adult_bmi;
  if (rec.child_weight_kg && rec.child_height_cm) {
    double height_m = *rec.child_height_cm / 100.0;
    if (height_m <= 0.0) return std::nullopt;
    return *rec.child_weight_kg / (height_m * height_m);
  }
  return std::nullopt;
}

// Adult strictly over 18 years; 18.0 itself is pediatric.
inline AgeGroup binarize_age(double age_years) {
  if (!std::isfinite(age_years) || age_years < 0.0) {
    fail(ErrorCode::InvalidAge, "age must be finite and non-negative, got " +
                                    std::to_string(age_years));
  }
  return age_years > 18.0 ? AgeGroup::Adult : AgeGroup::Pediatric;
}

// --- split list ------------------------------------------------------------------
//
// One line per recording stem: "<stem>\t<train|test>" (spaces also accepted).

inline std::map<std::string, Split> parse_split_list(const std::string& text) {
  std::map<std::string, Split> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    auto cols = detail::split_whitespace(line);
    if (cols.empty()) continue;
    if (cols.size() != 2 || (cols[1] != "train" && cols[1] != "test")) {
      fail(ErrorCode::UnparsableRow,
           "split list line " + std::to_string(line_no) + ": expected '<stem> train|test'");
    }
    out[cols[0]] = cols[1] == "train" ? Split::Train : Split::Test;
  }
  return out;
}

// --- manifest --------------------------------------------------------------------

struct ManifestEntry {
  std::string audio_path;
  CycleAnnotation annotation;
  RecordingMeta meta;
  LungSound label = LungSound::Normal;
  // integrity hash of the preprocessed segment; 0 when no cache was built
  std::uint64_t segment_hash = 0;
};

struct ManifestCounts {
  // rows: split, cols: label
  std::array<std::array<long long, kNumClasses>, 2> by_split_label{};

  long long split_total(Split s) const {
    long long t = 0;
    for (auto v : by_split_label[static_cast<int>(s)]) t += v;
    return t;
  }
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  ManifestCounts counts() const {
    ManifestCounts c;
    for (const auto& e : entries) {
      ++c.by_split_label[static_cast<int>(e.meta.split)][static_cast<int>(e.label)];
    }
    return c;
  }

  bool matches_official_counts() const {
    auto c = counts();
    return c.by_split_label[0] == kOfficialTrainCounts &&
           c.by_split_label[1] == kOfficialTestCounts;
  }

  bool splits_patient_disjoint() const {
    std::set<int> train_ids, test_ids;
    for (const auto& e : entries) {
      (e.meta.split == Split::Train ? train_ids : test_ids).insert(e.meta.patient_id);
    }
    for (int id : train_ids) {
      if (test_ids.count(id)) return false;
    }
    return true;
  }
};

namespace detail {

inline std::string read_text_file(const std::filesystem::path& p, ErrorCode missing) {
  std::ifstream in(p);
  if (!in) fail(missing, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path find_demographics_file(
    const std::filesystem::path& root) {
  static const char* kNames[] = {
      "demographic_info.txt",
      "ICBHI_Challenge_demographic_information.txt",
  };
  for (const char* name : kNames) {
    auto p = root / name;
    if (std::filesystem::exists(p)) return p;
  }
  fail(ErrorCode::MissingDemographics,
       "no demographics file found under " + root.string());
}

}  // namespace detail

// Walks data_root for wav files, joins annotations, demographics and the
// split list into labeled cycles. Ordering is lexicographic by audio path,
// then by cycle start time, so repeated builds are identical.
inline Manifest build_manifest(const std::filesystem::path& data_root,
                               const std::filesystem::path& split_list_path) {
  if (!std::filesystem::is_directory(data_root)) {
    fail(ErrorCode::IoError, "data root is not a directory: " + data_root.string());
  }
  std::vector<std::filesystem::path> wavs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(data_root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      wavs.push_back(entry.path());
    }
  }
  std::sort(wavs.begin(), wavs.end(),
            [](const auto& a, const auto& b) { return a.string() < b.string(); });
  if (wavs.empty()) {
    fail(ErrorCode::MissingAnnotation,
         "no wav files under " + data_root.string());
  }

  auto split_map = parse_split_list(
      detail::read_text_file(split_list_path, ErrorCode::IoError));
  auto demographics = parse_demographics(detail::read_text_file(
      detail::find_demographics_file(data_root), ErrorCode::MissingDemographics));

  Manifest manifest;
  for (const auto& wav_path : wavs) {
    std::string stem = wav_path.stem().string();
    FilenameFields fields = parse_filename(stem);

    auto ann_path = wav_path;
    ann_path.replace_extension(".txt");
    if (!std::filesystem::exists(ann_path)) {
      fail(ErrorCode::MissingAnnotation, "no annotation file for " + wav_path.string());
    }
    auto annotations = parse_annotation(
        detail::read_text_file(ann_path, ErrorCode::MissingAnnotation));

    auto split_it = split_map.find(stem);
    if (split_it == split_map.end()) {
      fail(ErrorCode::SplitMismatch, "recording " + stem + " absent from split list");
    }
    auto demo_it = demographics.find(fields.patient_id);
    if (demo_it == demographics.end()) {
      fail(ErrorCode::MissingDemographics,
           "no demographic row for patient " + std::to_string(fields.patient_id));
    }

    RecordingMeta meta;
    meta.patient_id = fields.patient_id;
    meta.recording_index = fields.recording_index;
    meta.location = fields.location;
    meta.acquisition_mode = fields.acquisition_mode;
    meta.device = fields.device;
    meta.age_group = binarize_age(demo_it->second.age_years);
    meta.sex = demo_it->second.sex;
    meta.bmi = derive_bmi(demo_it->second);
    meta.split = split_it->second;

    std::vector<CycleAnnotation> ordered = annotations;
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const CycleAnnotation& a, const CycleAnnotation& b) {
                       return a.start_s < b.start_s;
                     });
    for (const auto& ann : ordered) {
      ManifestEntry e;
      e.audio_path = wav_path.string();
      e.annotation = ann;
      e.meta = meta;
      e.label = ann.label();
      manifest.entries.push_back(std::move(e));
    }
  }
  return manifest;
}

// --- manifest serialization (JSON lines) -------------------------------------

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  nlohmann::json j{
      {"audio_path", e.audio_path},
      {"start_s", e.annotation.start_s},
      {"end_s", e.annotation.end_s},
      {"crackle", e.annotation.crackle},
      {"wheeze", e.annotation.wheeze},
      {"label", to_string(e.label)},
      {"patient_id", e.meta.patient_id},
      {"recording_index", e.meta.recording_index},
      {"location", to_string(e.meta.location)},
      {"acquisition_mode", to_string(e.meta.acquisition_mode)},
      {"device", to_string(e.meta.device)},
      {"age_group", to_string(e.meta.age_group)},
      {"sex", to_string(e.meta.sex)},
      {"split", to_string(e.meta.split)},
  };
  if (e.meta.bmi) j["bmi"] = *e.meta.bmi;
  if (e.segment_hash != 0) j["segment_hash"] = hex64(e.segment_hash);
  return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.audio_path = j.at("audio_path").get<std::string>();
  e.annotation.start_s = j.at("start_s").get<double>();
  e.annotation.end_s = j.at("end_s").get<double>();
  e.annotation.crackle = j.at("crackle").get<bool>();
  e.annotation.wheeze = j.at("wheeze").get<bool>();
  e.meta.patient_id = j.at("patient_id").get<int>();
  e.meta.recording_index = j.at("recording_index").get<std::string>();

  auto loc = enum_from_string<ChestLocation>(
      j.at("location").get<std::string>(), kNumLocations);
  if (!loc) fail(ErrorCode::UnknownCode, "bad location in manifest");
  e.meta.location = *loc;
  auto mode = mode_from_code(j.at("acquisition_mode").get<std::string>());
  if (!mode) fail(ErrorCode::UnknownCode, "bad acquisition mode in manifest");
  e.meta.acquisition_mode = *mode;
  auto dev = device_from_name(j.at("device").get<std::string>());
  if (!dev) fail(ErrorCode::UnknownCode, "bad device in manifest");
  e.meta.device = *dev;

  e.meta.age_group = j.at("age_group").get<std::string>() == "Adult"
                         ? AgeGroup::Adult
                         : AgeGroup::Pediatric;
  e.meta.sex = j.at("sex").get<std::string>() == "Male" ? Sex::Male : Sex::Female;
  e.meta.split = j.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
  if (j.contains("bmi")) e.meta.bmi = j.at("bmi").get<double>();
  if (j.contains("segment_hash")) {
    e.segment_hash = std::stoull(j.at("segment_hash").get<std::string>(), nullptr, 16);
  }
  e.label = e.annotation.label();
  return e;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write manifest: " + path.string());
  for (const auto& e : m.entries) {
    out << manifest_entry_to_json(e).dump() << '\n';
  }
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read manifest: " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.entries.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
  }
  return m;
}

}  // namespace bts
