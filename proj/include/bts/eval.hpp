#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bts/audio.hpp"
#include "bts/common.hpp"
#include "bts/ingest.hpp"
#include "bts/metrics.hpp"
#include "bts/model.hpp"
#include "bts/text.hpp"

namespace bts {

// A manifest entry with its preprocessed audio already pushed through the
// frozen audio encoder. Raw features are all the train/eval loops need, so
// wav decoding and resampling happen exactly once per cycle.
struct PreparedSample {
  RecordingMeta meta;
  int label = 0;
  Vec audio_raw;
};

// On-disk cache of preprocessed segments. Files are raw float32 keyed by the
// content hash of (audio bytes, annotation row, preprocessing parameters).
class SegmentCache {
 public:
  explicit SegmentCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  static std::uint64_t key(std::uint64_t audio_bytes_hash,
                           const CycleAnnotation& ann, const PrepParams& params) {
    std::string tag = format_fixed(ann.start_s, 9) + ";" +
                      format_fixed(ann.end_s, 9) + ";" +
                      std::to_string(ann.crackle) + std::to_string(ann.wheeze) +
                      ";" + params.cache_tag();
    return fnv1a64(tag, audio_bytes_hash);
  }

  std::filesystem::path path_for(std::uint64_t key) const {
    return dir_ / (hex64(key) + ".f32");
  }

  std::optional<WaveSegment> load(std::uint64_t key, int sample_rate) const {
    auto p = path_for(key);
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    WaveSegment seg;
    seg.sample_rate = sample_rate;
    in.seekg(0, std::ios::end);
    auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    seg.samples.resize(bytes / sizeof(float));
    in.read(reinterpret_cast<char*>(seg.samples.data()),
            static_cast<std::streamsize>(bytes));
    if (!in) return std::nullopt;
    return seg;
  }

  void store(std::uint64_t key, const WaveSegment& seg) const {
    std::ofstream out(path_for(key), std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write cache file " + path_for(key).string());
    out.write(reinterpret_cast<const char*>(seg.samples.data()),
              static_cast<std::streamsize>(seg.samples.size() * sizeof(float)));
  }

 private:
  std::filesystem::path dir_;
};

inline std::uint64_t file_bytes_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + p.string());
  std::uint64_t h = kFnvOffset;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

// Preprocesses and encodes every manifest entry of one split. Recordings are
// decoded once and reused across their cycles; the optional cache skips the
// resampler on hits.
inline std::vector<PreparedSample> prepare_samples(
    const Manifest& manifest, Split split, const AudioEncoder& encoder,
    const PrepParams& params = {}, const SegmentCache* cache = nullptr) {
  std::vector<PreparedSample> out;
  std::string hashed_path;
  std::uint64_t bytes_hash = 0;
  std::string loaded_path;
  WaveSegment recording;

  for (const auto& e : manifest.entries) {
    if (e.meta.split != split) continue;

    std::optional<WaveSegment> seg;
    std::uint64_t cache_key = 0;
    if (cache != nullptr) {
      if (e.audio_path != hashed_path) {
        bytes_hash = file_bytes_hash(e.audio_path);
        hashed_path = e.audio_path;
      }
      cache_key = SegmentCache::key(bytes_hash, e.annotation, params);
      seg = cache->load(cache_key, params.target_rate);
    }
    if (!seg) {
      if (e.audio_path != loaded_path) {
        recording = load_recording(e.audio_path);
        loaded_path = e.audio_path;
      }
      seg = preprocess_cycle(recording, e.annotation, params);
      if (cache != nullptr) cache->store(cache_key, *seg);
    }

    if (e.segment_hash != 0 && segment_content_hash(*seg) != e.segment_hash) {
      fail(ErrorCode::IoError,
           "segment hash mismatch for " + e.audio_path + " [" +
               format_fixed(e.annotation.start_s, 3) + ", " +
               format_fixed(e.annotation.end_s, 3) + ")");
    }

    PreparedSample s;
    s.meta = e.meta;
    s.label = static_cast<int>(e.label);
    s.audio_raw = encoder.encode(*seg);
    out.push_back(std::move(s));
  }
  return out;
}

// Memoizes raw text features; the description inventory is small, so every
// distinct string is encoded once per encoder.
class TextFeatureCache {
 public:
  const Vec& get(const TextEncoder& encoder, const std::string& text) {
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(text, encoder.encode(text)).first->second;
  }

 private:
  std::unordered_map<std::string, Vec> cache_;
};

struct Prediction {
  int true_label = 0;
  int pred_label = 0;
};

struct EvalOutput {
  ConfusionMatrix cm;
  std::vector<Prediction> predictions;       // aligned with the sample order
  std::vector<std::string> descriptions;     // final per-sample text (fused mode)
};

// Runs the model over prepared samples. The scenario transform touches text
// only; audio features come in precomputed and are never altered. Each sample
// draws its scenario randomness from a seed derived from (seed, index).
inline EvalOutput evaluate(const FusionModel& model,
                           const std::vector<PreparedSample>& samples,
                           const AttributeSubset& subset, Scenario scenario,
                           std::uint64_t seed) {
  EvalOutput out;
  TextFeatureCache text_cache;
  out.predictions.reserve(samples.size());

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PreparedSample& s = samples[i];
    TrainSample t;
    t.audio_raw = s.audio_raw;
    t.label = s.label;
    if (model.mode == FusionMode::Fused) {
      TextDescription desc = describe(s.meta, subset);
      desc = apply_scenario(desc, s.meta, scenario, mix_seed(seed, i));
      int tokens = token_count(desc.text);
      if (tokens > kTokenBudget) {
        fail(ErrorCode::TokenBudgetExceeded,
             "description tokenizes to " + std::to_string(tokens) + " tokens");
      }
      t.text_raw = text_cache.get(*model.bundle.text_encoder, desc.text);
      out.descriptions.push_back(desc.text);
    }
    Vec probs = softmax(model_logits_from_raw(model, t));
    int pred = predict_label(probs);
    out.cm.add(s.label, pred);
    out.predictions.push_back({s.label, pred});
  }
  return out;
}

// --- metadata slices -----------------------------------------------------------

enum class MetaAttribute { Age, Sex, Loc, Dev };

inline std::string_view to_string(MetaAttribute a) {
  switch (a) {
    case MetaAttribute::Age: return "Age";
    case MetaAttribute::Sex: return "Sex";
    case MetaAttribute::Loc: return "Loc";
    case MetaAttribute::Dev: return "Dev";
  }
  return "?";
}

inline std::optional<MetaAttribute> meta_attribute_from_string(std::string_view s) {
  if (s == "Age" || s == "age") return MetaAttribute::Age;
  if (s == "Sex" || s == "sex") return MetaAttribute::Sex;
  if (s == "Loc" || s == "loc") return MetaAttribute::Loc;
  if (s == "Dev" || s == "dev") return MetaAttribute::Dev;
  return std::nullopt;
}

struct SliceRow {
  std::string class_name;
  long long n_samples = 0;
  double ratio_pct = 0.0;
  std::optional<double> sp, se, score;  // absent when the subset lacks the class
};

namespace detail {

inline int attribute_class_count(MetaAttribute a) {
  switch (a) {
    case MetaAttribute::Age: return 2;
    case MetaAttribute::Sex: return 2;
    case MetaAttribute::Loc: return kNumLocations;
    case MetaAttribute::Dev: return kNumDevices;
  }
  return 0;
}

inline int attribute_class_of(MetaAttribute a, const RecordingMeta& m) {
  switch (a) {
    case MetaAttribute::Age: return static_cast<int>(m.age_group);
    case MetaAttribute::Sex: return static_cast<int>(m.sex);
    case MetaAttribute::Loc: return static_cast<int>(m.location);
    case MetaAttribute::Dev: return static_cast<int>(m.device);
  }
  return 0;
}

inline std::string attribute_class_name(MetaAttribute a, int cls) {
  switch (a) {
    case MetaAttribute::Age: return std::string(to_string(static_cast<AgeGroup>(cls)));
    case MetaAttribute::Sex: return std::string(to_string(static_cast<Sex>(cls)));
    case MetaAttribute::Loc:
      return std::string(to_string(static_cast<ChestLocation>(cls)));
    case MetaAttribute::Dev:
      return std::string(to_string(static_cast<Stethoscope>(cls)));
  }
  return "?";
}

}  // namespace detail

// Per-attribute-class sample ratio and Score over the matching test subset.
// Each slice uses its own confusion matrix; a component whose denominator is
// empty stays unset rather than poisoning the row.
inline std::vector<SliceRow> slice_by_metadata(
    const std::vector<Prediction>& predictions,
    const std::vector<PreparedSample>& samples, MetaAttribute attribute) {
  if (predictions.size() != samples.size()) {
    fail(ErrorCode::DimensionMismatch, "predictions/samples size mismatch");
  }
  int n_classes = detail::attribute_class_count(attribute);
  std::vector<ConfusionMatrix> cms(static_cast<std::size_t>(n_classes));
  std::vector<long long> counts(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    int cls = detail::attribute_class_of(attribute, samples[i].meta);
    cms[static_cast<std::size_t>(cls)].add(predictions[i].true_label,
                                           predictions[i].pred_label);
    ++counts[static_cast<std::size_t>(cls)];
  }

  auto total = static_cast<double>(samples.size());
  std::vector<SliceRow> rows;
  for (int cls = 0; cls < n_classes; ++cls) {
    SliceRow row;
    row.class_name = detail::attribute_class_name(attribute, cls);
    row.n_samples = counts[static_cast<std::size_t>(cls)];
    row.ratio_pct = total > 0 ? 100.0 * static_cast<double>(row.n_samples) / total : 0.0;
    if (row.n_samples > 0) {
      const auto& cm = cms[static_cast<std::size_t>(cls)];
      try {
        row.sp = specificity(cm);
      } catch (const Error&) {
      }
      try {
        row.se = sensitivity(cm);
      } catch (const Error&) {
      }
      if (row.sp && row.se) row.score = icbhi_score(*row.sp, *row.se);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- reports ----------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  double sp = 0.0, se = 0.0, score = 0.0;
  ConfusionMatrix cm;
};

struct Aggregate {
  double mean = 0.0, stddev = 0.0, variance = 0.0;
};

inline Aggregate aggregate_values(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  for (double x : xs) a.variance += (x - a.mean) * (x - a.mean);
  a.variance /= static_cast<double>(xs.size());
  a.stddev = std::sqrt(a.variance);
  return a;
}

struct SliceTable {
  MetaAttribute attribute = MetaAttribute::Age;
  std::vector<SliceRow> rows;  // Score averaged over seeds
};

struct EvalReport {
  std::string method_label;  // e.g. "BTS", "Audio-CLAP"
  nlohmann::json config;     // canonical run configuration
  std::vector<SeedResult> per_seed;
  Aggregate sp, se, score;
  std::vector<SliceTable> slices;

  void aggregate() {
    std::vector<double> sps, ses, scores;
    for (const auto& r : per_seed) {
      sps.push_back(r.sp);
      ses.push_back(r.se);
      scores.push_back(r.score);
    }
    sp = aggregate_values(sps);
    se = aggregate_values(ses);
    // per-seed Scores are aggregated directly; the Score mean is not
    // recomputed from the Sp/Se means
    score = aggregate_values(scores);
  }
};

// Averages per-seed slice tables; ratio and counts come from the first seed
// (they are identical across seeds).
inline SliceTable mean_slices(const std::vector<std::vector<SliceRow>>& per_seed,
                              MetaAttribute attribute) {
  SliceTable table;
  table.attribute = attribute;
  if (per_seed.empty()) return table;
  std::size_t n_rows = per_seed.front().size();
  for (std::size_t r = 0; r < n_rows; ++r) {
    SliceRow row = per_seed.front()[r];
    std::vector<double> sps, ses, scores;
    for (const auto& seed_rows : per_seed) {
      if (seed_rows[r].sp) sps.push_back(*seed_rows[r].sp);
      if (seed_rows[r].se) ses.push_back(*seed_rows[r].se);
      if (seed_rows[r].score) scores.push_back(*seed_rows[r].score);
    }
    row.sp = sps.empty() ? std::nullopt
                         : std::make_optional(aggregate_values(sps).mean);
    row.se = ses.empty() ? std::nullopt
                         : std::make_optional(aggregate_values(ses).mean);
    row.score = scores.empty() ? std::nullopt
                               : std::make_optional(aggregate_values(scores).mean);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// --- report serialization -----------------------------------------------------

inline nlohmann::json slice_row_to_json(const SliceRow& r) {
  nlohmann::json j{{"class", r.class_name},
                   {"n", r.n_samples},
                   {"ratio_pct", r.ratio_pct}};
  if (r.sp) j["sp"] = *r.sp;
  if (r.se) j["se"] = *r.se;
  if (r.score) j["score"] = *r.score;
  return j;
}

inline SliceRow slice_row_from_json(const nlohmann::json& j) {
  SliceRow r;
  r.class_name = j.at("class").get<std::string>();
  r.n_samples = j.at("n").get<long long>();
  r.ratio_pct = j.at("ratio_pct").get<double>();
  if (j.contains("sp")) r.sp = j.at("sp").get<double>();
  if (j.contains("se")) r.se = j.at("se").get<double>();
  if (j.contains("score")) r.score = j.at("score").get<double>();
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& r : rep.per_seed) {
    per_seed.push_back({{"seed", r.seed},
                        {"sp", r.sp},
                        {"se", r.se},
                        {"score", r.score},
                        {"confusion", r.cm.to_json()}});
  }
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{
        {"mean", a.mean}, {"stddev", a.stddev}, {"variance", a.variance}};
  };
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& t : rep.slices) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) rows.push_back(slice_row_to_json(r));
    slices.push_back(
        {{"attribute", std::string(to_string(t.attribute))}, {"rows", rows}});
  }
  return nlohmann::json{{"method", rep.method_label},
                        {"config", rep.config},
                        {"per_seed", per_seed},
                        {"sp", agg(rep.sp)},
                        {"se", agg(rep.se)},
                        {"score", agg(rep.score)},
                        {"slices", slices}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport rep;
  rep.method_label = j.at("method").get<std::string>();
  rep.config = j.at("config");
  for (const auto& r : j.at("per_seed")) {
    SeedResult s;
    s.seed = r.at("seed").get<std::uint64_t>();
    s.sp = r.at("sp").get<double>();
    s.se = r.at("se").get<double>();
    s.score = r.at("score").get<double>();
    s.cm = ConfusionMatrix::from_json(r.at("confusion"));
    rep.per_seed.push_back(std::move(s));
  }
  auto agg = [](const nlohmann::json& a) {
    return Aggregate{a.at("mean").get<double>(), a.at("stddev").get<double>(),
                     a.at("variance").get<double>()};
  };
  rep.sp = agg(j.at("sp"));
  rep.se = agg(j.at("se"));
  rep.score = agg(j.at("score"));
  for (const auto& t : j.at("slices")) {
    SliceTable table;
    auto attr = meta_attribute_from_string(t.at("attribute").get<std::string>());
    if (!attr) fail(ErrorCode::MissingReport, "bad slice attribute in report");
    table.attribute = *attr;
    for (const auto& r : t.at("rows")) table.rows.push_back(slice_row_from_json(r));
    rep.slices.push_back(std::move(table));
  }
  return rep;
}

}  // namespace bts
