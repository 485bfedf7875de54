#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bts/common.hpp"
#include "bts/eval.hpp"
#include "bts/ingest.hpp"
#include "bts/model.hpp"
#include "bts/train.hpp"

namespace bts {

// Everything a run needs; defaults reproduce the headline configuration as
// soon as dataset paths are supplied.
struct RunConfig {
  std::string manifest_path;
  std::string cache_dir;  // empty = preprocess in memory

  EncoderSource encoder = EncoderSource::make_stub(16, 0);
  FusionMode mode = FusionMode::Fused;
  AttributeSubset subset = AttributeSubset::all();
  Scenario scenario = Scenario::Standard;

  TrainHyperparams hp;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  PrepParams prep;

  std::string output_root = ".";  // not part of the canonical form

  // weights reused from an already-trained run (scenario evaluations)
  std::string weights_from;

  std::string method_label() const {
    if (mode == FusionMode::AudioOnly) return "Audio-CLAP";
    std::string label = "BTS";
    if (!(subset == AttributeSubset::all())) label += "(" + subset.name() + ")";
    switch (scenario) {
      case Scenario::Standard: break;
      case Scenario::BmiInjected: label += "[BMI]"; break;
      case Scenario::PartialMetadata: label += "[Partial Metadata]"; break;
      case Scenario::NoMetadata: label += "[No Metadata]"; break;
    }
    return label;
  }
};

// Canonical serialization: semantic fields only, keys sorted by the JSON
// library. The hash of this form names the run directory, and re-running an
// identical config lands in the same place.
inline nlohmann::json canonical_config_json(const RunConfig& c) {
  nlohmann::json enc;
  if (c.encoder.kind == EncoderSource::Kind::Stub) {
    enc = {{"kind", "stub"}, {"d", c.encoder.stub.d}, {"seed", c.encoder.stub.seed}};
  } else {
    enc = {{"kind", "checkpoint"}, {"path", c.encoder.checkpoint_path}};
  }
  nlohmann::json j{
      {"manifest", c.manifest_path},
      {"encoder", enc},
      {"mode", std::string(to_string(c.mode))},
      {"subset", c.subset.name()},
      {"scenario", std::string(to_string(c.scenario))},
      {"lr", c.hp.lr},
      {"epochs", c.hp.epochs},
      {"batch_size", c.hp.batch_size},
      {"beta1", c.hp.beta1},
      {"beta2", c.hp.beta2},
      {"epsilon", c.hp.epsilon},
      {"freeze_encoders", c.hp.freeze_encoders},
      {"holdout_fraction", c.hp.holdout_fraction},
      {"seeds", c.seeds},
      {"padding", c.prep.padding == PaddingMode::Cyclic ? "cyclic" : "zero"},
      {"target_s", c.prep.target_s},
      {"target_rate", c.prep.target_rate},
      {"resample_taps", c.prep.taps},
  };
  if (!c.weights_from.empty()) j["weights_from"] = c.weights_from;
  return j;
}

inline std::string config_hash(const RunConfig& c) {
  return hex64(fnv1a64(canonical_config_json(c).dump()));
}

// Rebuilds a RunConfig from its canonical form (e.g. a run directory's
// config.json); path-like fields that are not part of the canonical form are
// passed separately.
inline RunConfig runconfig_from_json(const nlohmann::json& j,
                                     std::string output_root,
                                     std::string cache_dir = "") {
  RunConfig c;
  try {
    c.manifest_path = j.at("manifest").get<std::string>();
    const auto& enc = j.at("encoder");
    if (enc.at("kind") == "stub") {
      c.encoder = EncoderSource::make_stub(enc.at("d").get<int>(),
                                           enc.at("seed").get<std::uint64_t>());
    } else if (enc.at("kind") == "checkpoint") {
      c.encoder = EncoderSource::make_checkpoint(enc.at("path").get<std::string>());
    } else {
      fail(ErrorCode::InvalidConfig, "unknown encoder kind in config");
    }
    auto mode = fusion_mode_from_string(j.at("mode").get<std::string>());
    if (!mode) fail(ErrorCode::InvalidConfig, "bad mode in config");
    c.mode = *mode;
    auto subset = AttributeSubset::from_name(j.at("subset").get<std::string>());
    if (!subset) fail(ErrorCode::InvalidConfig, "bad subset in config");
    c.subset = *subset;
    auto scenario = scenario_from_string(j.at("scenario").get<std::string>());
    if (!scenario) fail(ErrorCode::InvalidConfig, "bad scenario in config");
    c.scenario = *scenario;
    c.hp.lr = j.at("lr").get<double>();
    c.hp.epochs = j.at("epochs").get<int>();
    c.hp.batch_size = j.at("batch_size").get<int>();
    c.hp.beta1 = j.at("beta1").get<double>();
    c.hp.beta2 = j.at("beta2").get<double>();
    c.hp.epsilon = j.at("epsilon").get<double>();
    c.hp.freeze_encoders = j.at("freeze_encoders").get<bool>();
    c.hp.holdout_fraction = j.at("holdout_fraction").get<double>();
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.prep.padding = j.at("padding").get<std::string>() == "zero"
                         ? PaddingMode::Zero
                         : PaddingMode::Cyclic;
    c.prep.target_s = j.at("target_s").get<double>();
    c.prep.target_rate = j.at("target_rate").get<int>();
    c.prep.taps = j.at("resample_taps").get<int>();
    if (j.contains("weights_from")) {
      c.weights_from = j.at("weights_from").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
  }
  c.output_root = std::move(output_root);
  c.cache_dir = std::move(cache_dir);
  return c;
}

// --- plain-text tables -------------------------------------------------------

namespace detail {

inline std::size_t display_width(std::string_view s) {
  std::size_t w = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++w;  // count code points, not bytes
  }
  return w;
}

inline std::string pad_right(std::string s, std::size_t width) {
  std::size_t w = display_width(s);
  if (w < width) s.append(width - w, ' ');
  return s;
}

inline std::string metric_cell(const Aggregate& a) {
  return format_fixed(a.mean, 2) + " ±" + format_fixed(a.stddev, 2);
}

}  // namespace detail

inline std::string render_main_table(const std::vector<EvalReport>& reports) {
  std::string out;
  out += detail::pad_right("Method", 28) + detail::pad_right("Sp (%)", 16) +
         detail::pad_right("Se (%)", 16) + "Score (%)\n";
  out += std::string(68, '-') + "\n";
  for (const auto& r : reports) {
    out += detail::pad_right(r.method_label, 28) +
           detail::pad_right(detail::metric_cell(r.sp), 16) +
           detail::pad_right(detail::metric_cell(r.se), 16) +
           detail::metric_cell(r.score) + "\n";
  }
  return out;
}

inline std::filesystem::path run_dir_for(const RunConfig& c) {
  return std::filesystem::path(c.output_root) / "runs" / config_hash(c);
}

namespace detail {

inline void write_text_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  out << s;
}

inline void write_train_log(const std::filesystem::path& p,
                            const std::vector<EpochLog>& log) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  for (const auto& e : log) {
    out << nlohmann::json{{"epoch", e.epoch}, {"loss", e.mean_loss}, {"lr", e.lr}}
               .dump()
        << '\n';
  }
}

inline void write_descriptions(const std::filesystem::path& p,
                               const std::vector<std::string>& texts,
                               Scenario scenario, std::uint64_t seed) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out << nlohmann::json{{"sample", i},
                          {"text", texts[i]},
                          {"scenario", std::string(to_string(scenario))},
                          {"seed", seed}}
               .dump()
        << '\n';
  }
}

// Reference encoders for feature preparation; identical to the ones inside
// every per-seed model because the encoder source carries its own seed.
inline std::pair<std::shared_ptr<const TextEncoder>,
                 std::shared_ptr<const AudioEncoder>>
reference_encoders(const EncoderSource& source) {
  if (source.kind == EncoderSource::Kind::Stub) {
    return {std::make_shared<StubTextEncoder>(source.stub.d, source.stub.seed),
            std::make_shared<StubAudioEncoder>(source.stub.d, source.stub.seed)};
  }
  FusionModel m = load_model(source.checkpoint_path);
  return {m.bundle.text_encoder, m.bundle.audio_encoder};
}

inline std::uint64_t features_hash(const std::vector<PreparedSample>& samples) {
  std::uint64_t h = kFnvOffset;
  for (const auto& s : samples) {
    h = fnv1a64(s.audio_raw.data(), s.audio_raw.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace detail

struct ExperimentContext {
  Manifest manifest;
  std::vector<PreparedSample> train_samples;
  std::vector<PreparedSample> test_samples;
};

inline ExperimentContext load_experiment_context(const RunConfig& config) {
  ExperimentContext ctx;
  ctx.manifest = read_manifest(config.manifest_path);
  auto [text_enc, audio_enc] = detail::reference_encoders(config.encoder);
  std::optional<SegmentCache> cache;
  if (!config.cache_dir.empty()) cache.emplace(config.cache_dir);
  ctx.train_samples = prepare_samples(ctx.manifest, Split::Train, *audio_enc,
                                      config.prep, cache ? &*cache : nullptr);
  ctx.test_samples = prepare_samples(ctx.manifest, Split::Test, *audio_enc,
                                     config.prep, cache ? &*cache : nullptr);
  return ctx;
}

// Trains and evaluates once per seed, persists per-seed artifacts and the
// aggregated report under runs/<config-hash>/.
inline EvalReport run_experiment(const RunConfig& config,
                                 const ExperimentContext& ctx) {
  auto run_dir = run_dir_for(config);
  std::filesystem::create_directories(run_dir);
  detail::write_text_file(run_dir / "config.json",
                          canonical_config_json(config).dump(2) + "\n");

  // raw text features are seed-independent: encoders are frozen and training
  // always uses the standard (untransformed) descriptions
  auto [text_enc, audio_enc] = detail::reference_encoders(config.encoder);
  std::vector<TrainSample> train_set;
  train_set.reserve(ctx.train_samples.size());
  {
    TextFeatureCache text_cache;
    for (const auto& s : ctx.train_samples) {
      TrainSample t;
      t.audio_raw = s.audio_raw;
      t.label = s.label;
      if (config.mode == FusionMode::Fused) {
        t.text_raw = text_cache.get(*text_enc, describe(s.meta, config.subset).text);
      }
      train_set.push_back(std::move(t));
    }
  }

  EvalReport report;
  report.method_label = config.method_label();
  report.config = canonical_config_json(config);
  std::vector<std::vector<SliceRow>> slices_per_seed[4];

  for (std::uint64_t seed : config.seeds) {
    auto seed_dir = run_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(seed_dir);

    FusionModel model = make_model({config.encoder, config.mode, seed});
    FitResult fit_result;
    try {
      fit_result = fit(model, train_set, config.hp, seed);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DivergedLoss) {
        std::string detail = e.what();
        auto sep = detail.find(": ");
        if (sep != std::string::npos) detail = detail.substr(sep + 2);
        fail(ErrorCode::DivergedLoss,
             detail + " (seed " + std::to_string(seed) + ")");
      }
      throw;
    }
    detail::write_train_log(seed_dir / "train_log.jsonl", fit_result.log);
    save_model(model, seed_dir / "checkpoint.btsm");

    EvalOutput eval =
        evaluate(model, ctx.test_samples, config.subset, config.scenario, seed);
    detail::write_text_file(seed_dir / "confusion.json",
                            eval.cm.to_json().dump() + "\n");
    if (config.mode == FusionMode::Fused) {
      detail::write_descriptions(seed_dir / "descriptions.jsonl",
                                 eval.descriptions, config.scenario, seed);
    }

    SeedResult r;
    r.seed = seed;
    r.cm = eval.cm;
    r.sp = specificity(eval.cm);
    r.se = sensitivity(eval.cm);
    r.score = icbhi_score(r.sp, r.se);
    report.per_seed.push_back(r);

    for (int a = 0; a < 4; ++a) {
      slices_per_seed[a].push_back(slice_by_metadata(
          eval.predictions, ctx.test_samples, static_cast<MetaAttribute>(a)));
    }
  }

  report.aggregate();
  for (int a = 0; a < 4; ++a) {
    report.slices.push_back(
        mean_slices(slices_per_seed[a], static_cast<MetaAttribute>(a)));
  }
  detail::write_text_file(run_dir / "report.json",
                          report_to_json(report).dump(2) + "\n");
  detail::write_text_file(run_dir / "report.txt", render_main_table({report}));
  return report;
}

inline EvalReport run_experiment(const RunConfig& config) {
  return run_experiment(config, load_experiment_context(config));
}

inline bool run_already_complete(const RunConfig& config) {
  return std::filesystem::exists(run_dir_for(config) / "report.json");
}

inline EvalReport load_report(const std::filesystem::path& run_dir) {
  auto p = run_dir / "report.json";
  std::ifstream in(p);
  if (!in) fail(ErrorCode::MissingReport, "no report at " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MissingReport, "unreadable report at " + p.string() + ": " + e.what());
  }
  return report_from_json(j);
}

// --- the ablation matrix ------------------------------------------------------
//
// Full metadata, every leave-one-out three-attribute subset, and the
// audio-only baseline. Reduced subsets retrain with their reduced
// descriptions.

inline std::vector<RunConfig> ablation_configs(const RunConfig& base) {
  std::vector<RunConfig> configs;
  auto push_subset = [&](AttributeSubset subset) {
    RunConfig c = base;
    c.mode = FusionMode::Fused;
    c.subset = subset;
    c.scenario = Scenario::Standard;
    configs.push_back(std::move(c));
  };
  push_subset(AttributeSubset::all());
  push_subset({true, true, true, false});   // age-sex-loc
  push_subset({true, true, false, true});   // age-sex-dev
  push_subset({true, false, true, true});   // age-loc-dev
  push_subset({false, true, true, true});   // sex-loc-dev
  RunConfig audio = base;
  audio.mode = FusionMode::AudioOnly;
  audio.subset = AttributeSubset::all();
  audio.scenario = Scenario::Standard;
  configs.push_back(std::move(audio));
  return configs;
}

inline std::vector<EvalReport> run_ablation_matrix(const RunConfig& base) {
  auto ctx = load_experiment_context(base);
  std::vector<EvalReport> reports;
  for (const auto& c : ablation_configs(base)) {
    reports.push_back(run_experiment(c, ctx));
  }
  return reports;
}

// --- scenario evaluations ---------------------------------------------------------
//
// Test-time variations over one trained full-metadata model: the weights are
// loaded per seed from the base run and must come back out untouched, and the
// audio features are hash-checked around every evaluation.

inline EvalReport run_scenario_evaluation(const RunConfig& base_config,
                                          Scenario scenario,
                                          const ExperimentContext& ctx) {
  if (base_config.mode != FusionMode::Fused ||
      base_config.scenario != Scenario::Standard) {
    fail(ErrorCode::InvalidConfig,
         "scenario evaluation needs a trained fused standard-scenario base run");
  }
  auto base_dir = run_dir_for(base_config);
  if (!std::filesystem::exists(base_dir / "report.json")) {
    fail(ErrorCode::MissingReport,
         "base run has no report; train it first: " + base_dir.string());
  }
  const std::uint64_t features_before = detail::features_hash(ctx.test_samples);

  RunConfig sc_config = base_config;
  sc_config.scenario = scenario;
  sc_config.weights_from = config_hash(base_config);

  EvalReport report;
  report.method_label = sc_config.method_label();
  report.config = canonical_config_json(sc_config);
  std::vector<std::vector<SliceRow>> slices_per_seed[4];

  auto run_dir = run_dir_for(sc_config);
  std::filesystem::create_directories(run_dir);
  detail::write_text_file(run_dir / "config.json",
                          canonical_config_json(sc_config).dump(2) + "\n");

  for (std::uint64_t seed : base_config.seeds) {
    auto ckpt = base_dir / ("seed_" + std::to_string(seed)) / "checkpoint.btsm";
    FusionModel model = load_model(ckpt);
    const std::uint64_t weights_before = model_weights_hash(model);

    EvalOutput eval =
        evaluate(model, ctx.test_samples, sc_config.subset, scenario, seed);

    if (model_weights_hash(model) != weights_before ||
        detail::features_hash(ctx.test_samples) != features_before) {
      fail(ErrorCode::InvalidConfig,
           "scenario evaluation mutated weights or audio features");
    }

    auto seed_dir = run_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(seed_dir);
    detail::write_text_file(seed_dir / "confusion.json",
                            eval.cm.to_json().dump() + "\n");
    detail::write_descriptions(seed_dir / "descriptions.jsonl",
                               eval.descriptions, scenario, seed);

    SeedResult r;
    r.seed = seed;
    r.cm = eval.cm;
    r.sp = specificity(eval.cm);
    r.se = sensitivity(eval.cm);
    r.score = icbhi_score(r.sp, r.se);
    report.per_seed.push_back(r);
    for (int a = 0; a < 4; ++a) {
      slices_per_seed[a].push_back(slice_by_metadata(
          eval.predictions, ctx.test_samples, static_cast<MetaAttribute>(a)));
    }
  }

  report.aggregate();
  for (int a = 0; a < 4; ++a) {
    report.slices.push_back(
        mean_slices(slices_per_seed[a], static_cast<MetaAttribute>(a)));
  }
  detail::write_text_file(run_dir / "report.json",
                          report_to_json(report).dump(2) + "\n");
  detail::write_text_file(run_dir / "report.txt", render_main_table({report}));
  return report;
}

inline std::vector<EvalReport> run_scenario_matrix(const RunConfig& base_config) {
  if (!(base_config.subset == AttributeSubset::all())) {
    fail(ErrorCode::InvalidConfig,
         "scenario matrix needs a full-metadata base run");
  }
  auto ctx = load_experiment_context(base_config);
  std::vector<EvalReport> reports;
  const Scenario scenarios[] = {Scenario::Standard, Scenario::BmiInjected,
                                Scenario::PartialMetadata, Scenario::NoMetadata};
  for (Scenario scenario : scenarios) {
    reports.push_back(run_scenario_evaluation(base_config, scenario, ctx));
  }
  return reports;
}

// Per-sample shared-space embeddings (z_text, z_audio) for one trained seed;
// an analysis export, not part of any metric path.
inline void dump_embeddings(const RunConfig& base_config, std::uint64_t seed,
                            Scenario scenario, const ExperimentContext& ctx,
                            const std::filesystem::path& out_path) {
  auto ckpt = run_dir_for(base_config) / ("seed_" + std::to_string(seed)) /
              "checkpoint.btsm";
  FusionModel model = load_model(ckpt);
  std::ofstream out(out_path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + out_path.string());
  TextFeatureCache text_cache;
  for (std::size_t i = 0; i < ctx.test_samples.size(); ++i) {
    const auto& s = ctx.test_samples[i];
    nlohmann::json j{{"sample", i}, {"label", s.label}};
    Vec z_audio = model.bundle.audio_proj.forward(s.audio_raw);
    j["z_audio"] = z_audio;
    if (model.mode == FusionMode::Fused) {
      TextDescription desc = describe(s.meta, base_config.subset);
      desc = apply_scenario(desc, s.meta, scenario, mix_seed(seed, i));
      Vec z_text = model.bundle.text_proj.forward(
          text_cache.get(*model.bundle.text_encoder, desc.text));
      j["z_text"] = z_text;
    }
    out << j.dump() << '\n';
  }
}

// --- plain-text tables -----------------------------------------------------------

// Side-by-side per-metadata-class Scores; pass the audio-only report as
// `baseline` to add the difference column.
inline std::string render_slice_table(const EvalReport& report,
                                      const EvalReport* baseline = nullptr) {
  std::string out;
  out += detail::pad_right("Type", 6) + detail::pad_right("Class", 16) +
         detail::pad_right("Ratio (%)", 12) +
         detail::pad_right(report.method_label, 14);
  if (baseline != nullptr) {
    out += detail::pad_right(baseline->method_label, 14) + "Difference";
  }
  out += "\n" + std::string(baseline ? 72 : 48, '-') + "\n";

  for (const auto& table : report.slices) {
    const SliceTable* base_table = nullptr;
    if (baseline != nullptr) {
      for (const auto& t : baseline->slices) {
        if (t.attribute == table.attribute) base_table = &t;
      }
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      out += detail::pad_right(i == 0 ? std::string(to_string(table.attribute)) : "", 6);
      out += detail::pad_right(row.class_name, 16);
      out += detail::pad_right(format_fixed(row.ratio_pct, 2), 12);
      out += detail::pad_right(row.score ? format_fixed(*row.score, 2) : "-", 14);
      if (base_table != nullptr && i < base_table->rows.size()) {
        const auto& brow = base_table->rows[i];
        out += detail::pad_right(brow.score ? format_fixed(*brow.score, 2) : "-", 14);
        out += (row.score && brow.score)
                   ? format_fixed(*row.score - *brow.score, 2)
                   : "-";
      }
      out += "\n";
    }
  }
  return out;
}

inline std::string render_ablation_table(const std::vector<EvalReport>& reports) {
  std::string out;
  out += detail::pad_right("Method", 14) + detail::pad_right("Metadata", 18) +
         detail::pad_right("Sp (%)", 16) + detail::pad_right("Se (%)", 16) +
         "Score (%)\n";
  out += std::string(72, '-') + "\n";
  for (const auto& r : reports) {
    std::string mode = r.config.value("mode", "");
    std::string subset = r.config.value("subset", "");
    out += detail::pad_right(mode == "audio" ? "Audio-CLAP" : "BTS", 14) +
           detail::pad_right(mode == "audio" ? "-" : subset, 18) +
           detail::pad_right(detail::metric_cell(r.sp), 16) +
           detail::pad_right(detail::metric_cell(r.se), 16) +
           detail::metric_cell(r.score) + "\n";
  }
  return out;
}

inline std::string render_scenario_table(const std::vector<EvalReport>& reports) {
  return render_main_table(reports);
}

}  // namespace bts
