// Acceptance suite. Each criterion prints one [PASS]/[FAIL] line; the
// full-scale checks need the official dataset and trained runs and print
// [SKIP] when their inputs are not provided via environment variables:
//   BTS_ICBHI_ROOT / BTS_ICBHI_SPLIT   official dataset tree + split list
//   BTS_FULLSCALE_BTS_RUN              trained full-metadata run directory
//   BTS_FULLSCALE_AUDIO_RUN            trained audio-only run directory
//   BTS_FULLSCALE_SCENARIO_DIRS        colon-separated scenario run dirs
//   BTS_FULLSCALE_ABLATION_DIRS        colon-separated ablation run dirs
// Exit status is the number of failed criteria.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bts/bts.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using namespace bts;

namespace {

int g_failures = 0;

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

void criterion(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
    std::cout << "[PASS] criterion " << id << ": " << name << "\n";
  } catch (const CheckFailure& e) {
    ++g_failures;
    std::cout << "[FAIL] criterion " << id << ": " << name << " -- " << e.what()
              << "\n";
  } catch (const std::exception& e) {
    ++g_failures;
    std::cout << "[FAIL] criterion " << id << ": " << name
              << " -- unexpected error: " << e.what() << "\n";
  }
}

void skip(int id, const std::string& name, const std::string& why) {
  std::cout << "[SKIP] criterion " << id << ": " << name << " (" << why << ")\n";
}

const char* env(const char* name) { return std::getenv(name); }

std::vector<std::string> split_colons(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(':', start);
    out.push_back(
        s.substr(start, pos == std::string::npos ? s.size() - start : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename Fn>
bool code_thrown(ErrorCode code, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

// --- criterion 1: metric oracle ------------------------------------------------

void metric_oracle() {
  SplitMix64 rng(0xacce97);
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix cm;
    for (int t = 0; t < kNumClasses; ++t) {
      for (int p = 0; p < kNumClasses; ++p) {
        cm.m[t][p] = static_cast<long long>(rng.next_below(40));
      }
    }

    // independent route: expand to (true, pred) pairs and count
    long long n_total = 0, n_hit = 0, a_total = 0, a_hit = 0;
    for (int t = 0; t < kNumClasses; ++t) {
      for (int p = 0; p < kNumClasses; ++p) {
        for (long long k = 0; k < cm.m[t][p]; ++k) {
          if (t == 0) {
            ++n_total;
            if (p == 0) ++n_hit;
          } else {
            ++a_total;
            if (p == t) ++a_hit;
          }
        }
      }
    }

    if (n_total == 0) {
      require(code_thrown(ErrorCode::EmptyClass, [&] { specificity(cm); }),
              "empty Normal row must raise EmptyClass");
    } else {
      double sp = specificity(cm);
      require(sp == 100.0 * static_cast<double>(n_hit) / static_cast<double>(n_total),
              "specificity mismatch at trial " + std::to_string(trial));
    }
    if (a_total == 0) {
      require(code_thrown(ErrorCode::EmptyClass, [&] { sensitivity(cm); }),
              "empty adventitious rows must raise EmptyClass");
    } else {
      double se = sensitivity(cm);
      require(se == 100.0 * static_cast<double>(a_hit) / static_cast<double>(a_total),
              "sensitivity mismatch at trial " + std::to_string(trial));
      if (n_total > 0) {
        double sp = specificity(cm);
        require(icbhi_score(sp, se) == (sp + se) / 2.0, "score mismatch");
      }
    }
  }
}

// --- criterion 2: template golden strings --------------------------------------

void template_goldens() {
  RecordingMeta meta;
  meta.location = ChestLocation::LeftAnterior;
  meta.device = Stethoscope::Meditron;
  meta.age_group = AgeGroup::Adult;
  meta.sex = Sex::Male;

  auto expect = [&](AttributeSubset subset, const std::string& golden) {
    auto got = describe(meta, subset).text;
    require(got == golden, "expected \"" + golden + "\", got \"" + got + "\"");
  };
  expect({true, false, false, false}, "This patient is an adult patient.");
  expect({false, true, false, false}, "This patient is a male patient.");
  expect({false, false, true, false},
         "This sound was recorded from the left anterior chest.");
  expect({false, false, false, true},
         "This sound was recorded with a Meditron stethoscope.");
  expect({true, false, true, true},
         "This sound was recorded from the left anterior chest of an adult "
         "patient, using a Meditron stethoscope.");
  expect(AttributeSubset::all(),
         "This sound was recorded from the left anterior chest of an adult male "
         "patient, using a Meditron stethoscope.");
}

// --- criterion 3: scenario contract ---------------------------------------------

void scenario_contract() {
  RecordingMeta meta;
  meta.location = ChestLocation::LeftAnterior;
  meta.device = Stethoscope::Meditron;
  meta.age_group = AgeGroup::Adult;
  meta.sex = Sex::Male;
  meta.bmi = 20.5;
  auto desc = describe(meta);

  auto nometa = apply_scenario(desc, meta, Scenario::NoMetadata, 1);
  require(nometa.text == "No description.", "NoMetadata text is not the constant");

  auto bmi = apply_scenario(desc, meta, Scenario::BmiInjected, 1);
  require(bmi.text == desc.text + " The BMI of the patient was 20.50.",
          "BMI suffix mismatch: " + bmi.text);

  int replaced = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto out = apply_scenario(desc, meta, Scenario::PartialMetadata,
                              mix_seed(511, static_cast<std::uint64_t>(i)));
    if (out.text != desc.text) {
      ++replaced;
      require(out.text.find("Unknown") != std::string::npos,
              "substituted text lacks the Unknown token");
    }
  }
  double rate = static_cast<double>(replaced) / n;
  require(rate >= 0.08 && rate <= 0.12,
          "substitution rate " + format_fixed(rate, 4) + " outside 10% +/- 2%");
}

// --- criterion 4: preprocessing -------------------------------------------------

void preprocessing() {
  for (double duration : {0.2, 0.7, 2.0, 8.0, 13.5, 20.0}) {
    for (int rate : {4000, 44100}) {
      WaveSegment rec{fixtures::sine(90.0, duration + 0.01, rate), rate};
      auto out = preprocess_cycle(rec, {0.0, duration, false, false});
      require(out.sample_rate == 48000 && out.samples.size() == 384000,
              "pipeline output shape wrong for " + format_fixed(duration, 2) +
                  " s at " + std::to_string(rate) + " Hz");
    }
  }

  // cyclic padding, exhaustively on short segments
  for (int n = 1; n <= 40; ++n) {
    WaveSegment in;
    in.sample_rate = 20;
    for (int k = 0; k < n; ++k) in.samples.push_back(static_cast<float>(k * 3 + 1));
    auto out = standardize_duration(in, 8.0);  // 160 samples
    require(out.samples.size() == 160, "cyclic pad length wrong");
    for (std::size_t k = 0; k < out.samples.size(); ++k) {
      require(out.samples[k] == in.samples[k % static_cast<std::size_t>(n)],
              "cyclic pad oracle violated at n=" + std::to_string(n));
    }
  }

  // resampled sine against the analytic oracle
  auto seg = WaveSegment{fixtures::sine(100.0, 8.0, 4000, 0.5), 4000};
  auto out = resample(seg, 48000);
  auto oracle = fixtures::sine(100.0, 8.0, 48000, 0.5);
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    xy += static_cast<double>(out.samples[i]) * oracle[i];
    xx += static_cast<double>(out.samples[i]) * out.samples[i];
    yy += static_cast<double>(oracle[i]) * oracle[i];
  }
  double corr = xy / std::sqrt(xx * yy);
  require(corr > 0.999, "sine correlation " + format_fixed(corr, 6) + " <= 0.999");
}

// --- criterion 5: fusion and gradients -------------------------------------------

void fusion_and_gradients() {
  auto joint = fuse({1.0, 2.0}, {3.0, 4.0});
  require(joint.z == Vec{1.0, 2.0, 3.0, 4.0}, "concat layout is not text-first");
  require(code_thrown(ErrorCode::DimensionMismatch,
                      [] { fuse({1.0}, {1.0, 2.0}); }),
          "dimension mismatch not raised");

  std::vector<Vec> uniform(4, Vec{0.25, 0.25, 0.25, 0.25});
  double loss = ce_loss(uniform, {0, 1, 2, 3});
  require(std::abs(loss - 1.3862943611198906) <= 1e-9,
          "uniform cross-entropy is not ln 4");

  for (FusionMode mode : {FusionMode::Fused, FusionMode::AudioOnly}) {
    auto model = make_model({EncoderSource::make_stub(6, 21), mode, 3});
    SplitMix64 rng(17);
    std::vector<TrainSample> samples;
    for (int i = 0; i < 8; ++i) {
      TrainSample s;
      s.label = static_cast<int>(rng.next_below(kNumClasses));
      s.text_raw.assign(6, 0.0);
      s.audio_raw.assign(6, 0.0);
      for (auto& v : s.text_raw) v = rng.next_uniform(-1.0, 1.0);
      for (auto& v : s.audio_raw) v = rng.next_uniform(-1.0, 1.0);
      samples.push_back(std::move(s));
    }
    std::vector<std::size_t> batch = {0, 1, 2, 3, 4, 5, 6, 7};
    double err = gradient_check(model, samples, batch, false, 24);
    require(err < 1e-4, "finite-difference disagreement " + format_fixed(err, 8));
  }
}

// --- criterion 6: training smoke --------------------------------------------------

void training_smoke() {
  auto make = [] {
    return make_model({EncoderSource::make_stub(8, 31), FusionMode::Fused, 7});
  };
  auto model = make();
  SplitMix64 rng(2718);
  std::vector<TrainSample> samples;
  for (int i = 0; i < 32; ++i) {
    TrainSample s;
    s.label = static_cast<int>(rng.next_below(kNumClasses));
    s.text_raw.assign(8, 0.0);
    s.audio_raw.assign(8, 0.0);
    for (auto& v : s.text_raw) v = rng.next_uniform(-1.0, 1.0) + 0.4 * s.label;
    for (auto& v : s.audio_raw) v = rng.next_uniform(-1.0, 1.0) - 0.4 * s.label;
    samples.push_back(std::move(s));
  }

  TrainHyperparams hp;
  hp.epochs = 5;
  auto a = fit(model, samples, hp, 13);
  require(a.log.size() == 5, "expected 5 epoch log rows");
  require(a.log.back().mean_loss < a.log.front().mean_loss,
          "final epoch loss did not drop below the first epoch loss");

  auto model_b = make();
  auto b = fit(model_b, samples, hp, 13);
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    require(a.log[e].mean_loss == b.log[e].mean_loss,
            "loss traces differ at epoch " + std::to_string(e));
  }
}

// --- criterion 7: ingestion fixtures ----------------------------------------------

void ingestion_fixtures() {
  fixtures::TempDir dir("accept_ingest");
  fixtures::make_mini_tree(dir.path());
  auto manifest = build_manifest(dir.path(), fixtures::split_list_path(dir.path()));
  require(manifest.entries.size() == 2, "mini fixture should yield 2 cycles");
  auto counts = manifest.counts();
  require(counts.by_split_label[0][0] == 1 && counts.by_split_label[0][2] == 1,
          "mini fixture counts wrong");
  require(manifest.entries[0].label == LungSound::Normal &&
              manifest.entries[1].label == LungSound::Wheeze,
          "mini fixture labels wrong");

  // malformed fixtures raise their specified categories
  require(code_thrown(ErrorCode::UnknownCode,
                      [] { parse_filename("999_1_Xx_sc_Meditron.wav"); }),
          "unknown location code not rejected");
  require(code_thrown(ErrorCode::MalformedFilename,
                      [] { parse_filename("101_1b1_Al.wav"); }),
          "short filename not rejected");
  require(code_thrown(ErrorCode::NonMonotoneInterval,
                      [] { parse_annotation("2.0\t1.0\t0\t0"); }),
          "reversed interval not rejected");

  {
    fixtures::TempDir broken("accept_noann");
    fixtures::make_mini_tree(broken.path());
    fs::remove(broken.path() / "101_1b1_Al_sc_Meditron.txt");
    require(code_thrown(ErrorCode::MissingAnnotation,
                        [&] {
                          build_manifest(broken.path(),
                                         fixtures::split_list_path(broken.path()));
                        }),
            "missing annotation not surfaced");
  }
  {
    fixtures::TempDir broken("accept_nosplit");
    fixtures::make_mini_tree(broken.path());
    std::ofstream(broken.path() / "split.txt") << "";
    require(code_thrown(ErrorCode::SplitMismatch,
                        [&] {
                          build_manifest(broken.path(),
                                         fixtures::split_list_path(broken.path()));
                        }),
            "split-list omission not surfaced");
  }

  for (bool crackle : {false, true}) {
    for (bool wheeze : {false, true}) {
      auto [c, w] = flags_from_label(label_from_flags(crackle, wheeze));
      require(c == crackle && w == wheeze, "label bijection broken");
    }
  }
}

// --- criterion 8: end-to-end determinism ------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void cli_determinism() {
  fixtures::TempDir dir("accept_det");
  fixtures::make_full_tree(dir.path());
  auto manifest = (dir.path() / "manifest.jsonl").string();

  auto cli = [&](const std::string& args) {
    std::string cmd = std::string(BTS_CLI_PATH) + " " + args + " > " +
                      (dir.path() / "out.txt").string() + " 2> " +
                      (dir.path() / "err.txt").string();
    int status = std::system(cmd.c_str());
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    require(code == 0, "CLI failed: " + args + " -- " + slurp(dir.path() / "err.txt"));
  };

  cli("prepare --data-root " + dir.path().string() + " --split-list " +
      fixtures::split_list_path(dir.path()).string() + " --manifest " + manifest);

  std::string train_flags = "train --manifest " + manifest +
                            " --encoder stub --d 8 --seeds 0,1,2,3,4 --epochs 3";
  cli(train_flags + " --output " + (dir.path() / "out_a").string());
  cli(train_flags + " --output " + (dir.path() / "out_b").string());

  fs::path report_a, report_b;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "out_a")) {
    if (e.path().filename() == "report.json") report_a = e.path();
  }
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "out_b")) {
    if (e.path().filename() == "report.json") report_b = e.path();
  }
  require(!report_a.empty() && !report_b.empty(), "reports not found");
  require(slurp(report_a) == slurp(report_b),
          "reports differ between identical runs");
  require(slurp(report_a).find("per_seed") != std::string::npos,
          "report lacks per-seed results");
}

// --- criteria 9-12: full-scale checks ----------------------------------------------

void official_counts(const std::string& root, const std::string& split) {
  auto manifest = build_manifest(root, split);
  auto counts = manifest.counts();
  require(manifest.matches_official_counts(),
          "per-class counts do not match the official totals (train " +
              std::to_string(counts.split_total(Split::Train)) + ", test " +
              std::to_string(counts.split_total(Split::Test)) + ")");
  require(counts.split_total(Split::Train) == kOfficialTrainTotal &&
              counts.split_total(Split::Test) == kOfficialTestTotal,
          "split totals wrong");
  require(manifest.splits_patient_disjoint(), "patient overlap between splits");
}

void fullscale_scores(const std::string& bts_dir, const std::string& audio_dir) {
  auto bts_report = load_report(bts_dir);
  auto audio_report = load_report(audio_dir);
  require(bts_report.per_seed.size() == 5, "BTS run must have 5 seeds");
  require(audio_report.per_seed.size() == 5, "Audio run must have 5 seeds");
  require(bts_report.score.mean >= 62.74 && bts_report.score.mean <= 64.34,
          "BTS Score " + format_fixed(bts_report.score.mean, 2) +
              " outside [62.74, 64.34]");
  require(audio_report.score.mean >= 62.19 && audio_report.score.mean <= 62.93,
          "Audio-CLAP Score " + format_fixed(audio_report.score.mean, 2) +
              " outside [62.19, 62.93]");
}

void fullscale_scenarios(const std::vector<std::string>& dirs,
                         const std::string& audio_dir) {
  require(dirs.size() == 4, "need 4 scenario run dirs (standard, bmi, partial, nometa)");
  std::vector<double> scores;
  for (const auto& d : dirs) scores.push_back(load_report(d).score.mean);
  scores.push_back(load_report(audio_dir).score.mean);
  for (std::size_t i = 1; i < scores.size(); ++i) {
    require(scores[i - 1] >= scores[i] - 0.3,
            "scenario ordering violated at position " + std::to_string(i) + " (" +
                format_fixed(scores[i - 1], 2) + " vs " +
                format_fixed(scores[i], 2) + ")");
  }
}

void fullscale_ablation(const std::vector<std::string>& dirs) {
  require(dirs.size() == 6, "need 6 ablation run dirs (all, 4 subsets, audio)");
  std::vector<EvalReport> reports;
  for (const auto& d : dirs) reports.push_back(load_report(d));
  const auto& all = reports.front();
  const auto& audio = reports.back();
  for (std::size_t i = 1; i + 1 < reports.size(); ++i) {
    require(all.score.mean >= reports[i].score.mean - reports[i].score.stddev,
            "full metadata does not dominate subset " + std::to_string(i));
    require(reports[i].score.mean >= audio.score.mean - reports[i].score.stddev,
            "subset " + std::to_string(i) + " does not dominate the baseline");
  }
}

}  // namespace

int main() {
  criterion(1, "metric oracle over 1000 random confusion matrices", metric_oracle);
  criterion(2, "template golden strings reproduced byte-exact", template_goldens);
  criterion(3, "scenario contract (constant text, BMI suffix, 10% substitution)",
            scenario_contract);
  criterion(4, "preprocessing pipeline shape, cyclic pad oracle, sine fidelity",
            preprocessing);
  criterion(5, "fusion layout, gradient agreement, uniform cross-entropy",
            fusion_and_gradients);
  criterion(6, "training smoke: loss descent and seed determinism", training_smoke);
  criterion(7, "ingestion fixtures and error categories", ingestion_fixtures);
  criterion(8, "byte-identical reports from identical train invocations",
            cli_determinism);

  const char* root = env("BTS_ICBHI_ROOT");
  const char* split = env("BTS_ICBHI_SPLIT");
  if (root != nullptr && split != nullptr) {
    criterion(9, "official manifest counts and patient-disjoint splits",
              [&] { official_counts(root, split); });
  } else {
    skip(9, "official manifest counts and patient-disjoint splits",
         "set BTS_ICBHI_ROOT and BTS_ICBHI_SPLIT to run");
  }

  const char* bts_run = env("BTS_FULLSCALE_BTS_RUN");
  const char* audio_run = env("BTS_FULLSCALE_AUDIO_RUN");
  if (bts_run != nullptr && audio_run != nullptr) {
    criterion(10, "full-scale Score ranges",
              [&] { fullscale_scores(bts_run, audio_run); });
  } else {
    skip(10, "full-scale Score ranges",
         "set BTS_FULLSCALE_BTS_RUN and BTS_FULLSCALE_AUDIO_RUN to run");
  }

  const char* scenario_dirs = env("BTS_FULLSCALE_SCENARIO_DIRS");
  if (scenario_dirs != nullptr && audio_run != nullptr) {
    criterion(11, "scenario Score ordering", [&] {
      fullscale_scenarios(split_colons(scenario_dirs), audio_run);
    });
  } else {
    skip(11, "scenario Score ordering",
         "set BTS_FULLSCALE_SCENARIO_DIRS and BTS_FULLSCALE_AUDIO_RUN to run");
  }

  const char* ablation_dirs = env("BTS_FULLSCALE_ABLATION_DIRS");
  if (ablation_dirs != nullptr) {
    criterion(12, "ablation Score ordering",
              [&] { fullscale_ablation(split_colons(ablation_dirs)); });
  } else {
    skip(12, "ablation Score ordering", "set BTS_FULLSCALE_ABLATION_DIRS to run");
  }

  if (g_failures == 0) {
    std::cout << "acceptance: all executed criteria passed\n";
  } else {
    std::cout << "acceptance: " << g_failures << " criteria FAILED\n";
  }
  return g_failures;
}
