// Command-line front end: prepare / train / evaluate / ablate / scenario /
// report over the library. Exit code 0 on success; failures print
// "error: <Category>: <detail>" on stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bts/bts.hpp"

namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr ? v : fallback;
}

fs::path normalized_dir(const std::string& dir) {
  fs::path p = fs::path(dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();  // drop a trailing slash
  return p;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t pos = csv.find(',', start);
    std::string tok = csv.substr(
        start, pos == std::string::npos ? csv.size() - start : pos - start);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (seeds.empty()) bts::fail(bts::ErrorCode::InvalidConfig, "empty seed list");
  return seeds;
}

// Flags shared by train/ablate/scenario; values resolve in order
// built-in default < --config file < explicit flag.
struct TrainFlags {
  std::string config_file;
  std::string manifest;
  std::string output = env_or("BTS_OUTPUT_ROOT", ".");
  std::string cache_dir = env_or("BTS_CACHE_DIR", "");
  std::string mode = "fused";
  std::string subset = "all";
  std::string scenario = "standard";
  std::string encoder = "stub";
  int stub_d = 16;
  std::uint64_t encoder_seed = 0;
  std::string seeds = "0,1,2,3,4";
  double lr = 5e-5;
  int epochs = 50;
  int batch_size = 8;
  bool freeze_encoders = false;
  double holdout = 0.0;
  std::string padding = "cyclic";
  bool resume = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file; flags override");
    cmd->add_option("--manifest", manifest, "manifest produced by `prepare`");
    cmd->add_option("--output", output, "output root for runs/");
    cmd->add_option("--cache-dir", cache_dir, "preprocessed segment cache");
    cmd->add_option("--mode", mode, "fused|audio")
        ->check(CLI::IsMember({"fused", "audio"}));
    cmd->add_option("--subset", subset, "metadata subset, e.g. all or age-sex-loc");
    cmd->add_option("--scenario", scenario, "standard|bmi|partial|nometa")
        ->check(CLI::IsMember({"standard", "bmi", "partial", "nometa"}));
    cmd->add_option("--encoder", encoder, "stub or a checkpoint path");
    cmd->add_option("--d", stub_d, "stub embedding width");
    cmd->add_option("--encoder-seed", encoder_seed, "stub encoder seed");
    cmd->add_option("--seeds", seeds, "comma-separated run seeds");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch_size, "batch size");
    cmd->add_flag("--freeze-encoders", freeze_encoders, "train the head only");
    cmd->add_option("--holdout", holdout,
                    "fraction of train carved out for epoch selection");
    cmd->add_option("--padding", padding, "cyclic|zero")
        ->check(CLI::IsMember({"cyclic", "zero"}));
    cmd->add_flag("--resume", resume, "skip runs that already have a report");
  }

  bts::RunConfig resolve(const CLI::App* cmd) const {
    bts::RunConfig c;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) bts::fail(bts::ErrorCode::InvalidConfig, "cannot read " + config_file);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        bts::fail(bts::ErrorCode::InvalidConfig,
                  config_file + std::string(": ") + e.what());
      }
      c = bts::runconfig_from_json(j, j.value("output_root", output),
                                   j.value("cache_dir", cache_dir));
    }
    auto given = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    bool fresh = config_file.empty();

    if (fresh || given("--manifest")) c.manifest_path = manifest;
    if (fresh || given("--output")) c.output_root = output;
    if (fresh || given("--cache-dir")) c.cache_dir = cache_dir;
    if (fresh || given("--mode")) {
      c.mode = *bts::fusion_mode_from_string(mode);
    }
    if (fresh || given("--subset")) {
      auto s = bts::AttributeSubset::from_name(subset);
      if (!s) bts::fail(bts::ErrorCode::InvalidConfig, "bad subset '" + subset + "'");
      c.subset = *s;
    }
    if (fresh || given("--scenario")) {
      c.scenario = *bts::scenario_from_string(scenario);
    }
    if (fresh || given("--encoder") || given("--d") || given("--encoder-seed")) {
      if (encoder == "stub") {
        c.encoder = bts::EncoderSource::make_stub(stub_d, encoder_seed);
      } else {
        c.encoder = bts::EncoderSource::make_checkpoint(encoder);
      }
    }
    if (fresh || given("--seeds")) c.seeds = parse_seed_list(seeds);
    if (fresh || given("--lr")) c.hp.lr = lr;
    if (fresh || given("--epochs")) c.hp.epochs = epochs;
    if (fresh || given("--batch-size")) c.hp.batch_size = batch_size;
    if (fresh || given("--freeze-encoders")) c.hp.freeze_encoders = freeze_encoders;
    if (fresh || given("--holdout")) c.hp.holdout_fraction = holdout;
    if (fresh || given("--padding")) {
      c.prep.padding =
          padding == "zero" ? bts::PaddingMode::Zero : bts::PaddingMode::Cyclic;
    }
    if (c.manifest_path.empty()) {
      bts::fail(bts::ErrorCode::InvalidConfig, "--manifest is required");
    }
    return c;
  }
};

void print_counts(const bts::Manifest& manifest) {
  auto counts = manifest.counts();
  auto row = [&](bts::Split split) {
    const auto& c = counts.by_split_label[static_cast<int>(split)];
    std::cout << bts::to_string(split) << " cycles: " << counts.split_total(split)
              << " (Normal " << c[0] << ", Crackle " << c[1] << ", Wheeze "
              << c[2] << ", Both " << c[3] << ")\n";
  };
  row(bts::Split::Train);
  row(bts::Split::Test);
  if (manifest.matches_official_counts()) {
    std::cout << "counts OK: " << bts::kOfficialTrainTotal << " train / "
              << bts::kOfficialTestTotal << " test\n";
  } else {
    std::cout << "counts differ from the official ICBHI totals ("
              << bts::kOfficialTrainTotal << " train / " << bts::kOfficialTestTotal
              << " test)\n";
  }
  std::cout << "patient splits disjoint: "
            << (manifest.splits_patient_disjoint() ? "yes" : "NO") << "\n";
}

int cmd_prepare(const std::string& data_root, const std::string& split_list,
                const std::string& manifest_out, const std::string& cache_dir,
                const std::string& padding) {
  bts::Manifest manifest = bts::build_manifest(data_root, split_list);

  bts::PrepParams prep;
  prep.padding = padding == "zero" ? bts::PaddingMode::Zero : bts::PaddingMode::Cyclic;
  if (!cache_dir.empty()) {
    bts::SegmentCache cache(cache_dir);
    std::string current_path;
    bts::WaveSegment recording;
    std::uint64_t bytes_hash = 0;
    for (auto& e : manifest.entries) {
      if (e.audio_path != current_path) {
        recording = bts::load_recording(e.audio_path);
        bytes_hash = bts::file_bytes_hash(e.audio_path);
        current_path = e.audio_path;
      }
      std::uint64_t key = bts::SegmentCache::key(bytes_hash, e.annotation, prep);
      auto seg = cache.load(key, prep.target_rate);
      if (!seg) {
        seg = bts::preprocess_cycle(recording, e.annotation, prep);
        cache.store(key, *seg);
      }
      e.segment_hash = bts::segment_content_hash(*seg);
    }
    std::cout << "segment cache: " << cache_dir << "\n";
  }

  bts::write_manifest(manifest, manifest_out);
  std::cout << "manifest: " << manifest_out << " (" << manifest.entries.size()
            << " cycles)\n";
  print_counts(manifest);

  // audit table of the standard descriptions, one row per manifest entry
  fs::path desc_path = fs::path(manifest_out).parent_path() / "descriptions.jsonl";
  if (fs::path(manifest_out).parent_path().empty()) desc_path = "descriptions.jsonl";
  std::ofstream desc_out(desc_path);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    auto desc = bts::describe(manifest.entries[i].meta);
    desc_out << nlohmann::json{{"sample", i},
                               {"text", desc.text},
                               {"scenario", "standard"},
                               {"seed", 0}}
                    .dump()
             << '\n';
  }
  std::cout << "description table: " << desc_path.string() << "\n";
  std::cout << "unique text descriptions over all subsets: "
            << bts::enumerate_descriptions().size() << "\n";
  return 0;
}

int cmd_train(const bts::RunConfig& config, bool resume) {
  if (resume && bts::run_already_complete(config)) {
    std::cout << "run " << bts::config_hash(config)
              << " already has a report; nothing to do\n";
    return 0;
  }
  // surface checkpoint problems before any data work
  if (config.encoder.kind == bts::EncoderSource::Kind::Checkpoint) {
    bts::load_model(config.encoder.checkpoint_path);
  }
  bts::EvalReport report = bts::run_experiment(config);
  std::cout << "run dir: " << bts::run_dir_for(config).string() << "\n";
  std::cout << bts::render_main_table({report});
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& scenario_name,
                 const std::string& output, const std::string& cache_dir,
                 const std::string& dump_path) {
  fs::path dir = normalized_dir(run_dir);
  std::ifstream in(dir / "config.json");
  if (!in) {
    bts::fail(bts::ErrorCode::MissingReport, "no config.json under " + run_dir);
  }
  nlohmann::json j;
  in >> j;
  std::string out_root = output.empty() ? dir.parent_path().parent_path().string()
                                        : output;
  bts::RunConfig base = bts::runconfig_from_json(j, out_root, cache_dir);

  auto scenario = bts::scenario_from_string(scenario_name);
  if (!scenario) {
    bts::fail(bts::ErrorCode::InvalidConfig, "bad scenario '" + scenario_name + "'");
  }
  auto ctx = bts::load_experiment_context(base);
  bts::EvalReport report = bts::run_scenario_evaluation(base, *scenario, ctx);
  std::cout << bts::render_main_table({report});
  if (!dump_path.empty()) {
    bts::dump_embeddings(base, base.seeds.front(), *scenario, ctx, dump_path);
    std::cout << "embeddings: " << dump_path << "\n";
  }
  return 0;
}

int cmd_ablate(const bts::RunConfig& base) {
  auto reports = bts::run_ablation_matrix(base);
  std::cout << bts::render_ablation_table(reports);
  return 0;
}

int cmd_scenario(const std::string& run_dir, const std::string& output,
                 const std::string& cache_dir) {
  fs::path dir = normalized_dir(run_dir);
  std::ifstream in(dir / "config.json");
  if (!in) {
    bts::fail(bts::ErrorCode::MissingReport, "no config.json under " + run_dir);
  }
  nlohmann::json j;
  in >> j;
  std::string out_root = output.empty() ? dir.parent_path().parent_path().string()
                                        : output;
  bts::RunConfig base = bts::runconfig_from_json(j, out_root, cache_dir);
  auto reports = bts::run_scenario_matrix(base);
  std::cout << bts::render_scenario_table(reports);
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& style,
               const std::string& baseline_dir) {
  std::vector<bts::EvalReport> reports;
  for (const auto& d : run_dirs) reports.push_back(bts::load_report(d));

  if (style == "ablation") {
    std::cout << bts::render_ablation_table(reports);
  } else if (style == "slices") {
    std::optional<bts::EvalReport> baseline;
    if (!baseline_dir.empty()) baseline = bts::load_report(baseline_dir);
    for (const auto& r : reports) {
      std::cout << bts::render_slice_table(r, baseline ? &*baseline : nullptr);
    }
  } else {
    std::cout << bts::render_main_table(reports);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"respiratory sound classification with metadata-derived text"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand(
      "prepare", "parse a dataset tree into a manifest (and optional cache)");
  std::string data_root, split_list, manifest_out;
  std::string prep_cache = env_or("BTS_CACHE_DIR", "");
  std::string prep_padding = "cyclic";
  prepare->add_option("--data-root", data_root, "dataset directory")->required();
  prepare->add_option("--split-list", split_list, "official split list file")
      ->required();
  prepare->add_option("--manifest", manifest_out, "output manifest path")
      ->required();
  prepare->add_option("--cache-dir", prep_cache,
                      "preprocess all cycles into this cache");
  prepare->add_option("--padding", prep_padding, "cyclic|zero")
      ->check(CLI::IsMember({"cyclic", "zero"}));

  // train
  auto* train = app.add_subcommand("train", "fine-tune and evaluate over seeds");
  TrainFlags train_flags;
  train_flags.add_to(train);

  // evaluate
  auto* evaluate = app.add_subcommand(
      "evaluate", "re-evaluate a trained run under a metadata scenario");
  std::string eval_run_dir, eval_scenario = "standard", eval_output,
              eval_cache = env_or("BTS_CACHE_DIR", ""), eval_dump;
  evaluate->add_option("--run-dir", eval_run_dir, "trained run directory")
      ->required();
  evaluate->add_option("--scenario", eval_scenario, "standard|bmi|partial|nometa")
      ->check(CLI::IsMember({"standard", "bmi", "partial", "nometa"}));
  evaluate->add_option("--output", eval_output, "output root (defaults beside the run)");
  evaluate->add_option("--cache-dir", eval_cache, "preprocessed segment cache");
  evaluate->add_option("--dump-embeddings", eval_dump,
                       "write per-sample (z_text, z_audio) JSONL here");

  // ablate
  auto* ablate = app.add_subcommand(
      "ablate", "run the metadata-subset matrix plus the audio-only baseline");
  TrainFlags ablate_flags;
  ablate_flags.add_to(ablate);

  // scenario
  auto* scenario = app.add_subcommand(
      "scenario", "evaluate a trained run under all metadata scenarios");
  std::string sc_run_dir, sc_output, sc_cache = env_or("BTS_CACHE_DIR", "");
  scenario->add_option("--run-dir", sc_run_dir, "trained full-metadata run")
      ->required();
  scenario->add_option("--output", sc_output, "output root");
  scenario->add_option("--cache-dir", sc_cache, "preprocessed segment cache");

  // report
  auto* report = app.add_subcommand("report", "render tables from run reports");
  std::vector<std::string> report_dirs;
  std::string report_style = "main", report_baseline;
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--style", report_style, "main|ablation|slices")
      ->check(CLI::IsMember({"main", "ablation", "slices"}));
  report->add_option("--baseline", report_baseline,
                     "baseline run for slice differences");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      return cmd_prepare(data_root, split_list, manifest_out, prep_cache,
                         prep_padding);
    }
    if (train->parsed()) {
      return cmd_train(train_flags.resolve(train), train_flags.resume);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_run_dir, eval_scenario, eval_output, eval_cache,
                          eval_dump);
    }
    if (ablate->parsed()) {
      return cmd_ablate(ablate_flags.resolve(ablate));
    }
    if (scenario->parsed()) {
      return cmd_scenario(sc_run_dir, sc_output, sc_cache);
    }
    if (report->parsed()) {
      return cmd_report(report_dirs, report_style, report_baseline);
    }
  } catch (const bts::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Unexpected: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
