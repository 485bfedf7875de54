#pragma once

// Shared test scaffolding: a scratch directory, simple signal generators and
// synthetic dataset trees in the ICBHI on-disk layout.

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "bts/common.hpp"
#include "bts/wav.hpp"

namespace fixtures {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = fs::temp_directory_path() /
            ("bts_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }

  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::vector<float> sine(double freq_hz, double duration_s, int rate,
                               double amp = 0.5) {
  auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  std::vector<float> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = static_cast<float>(
        amp * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(k) / rate));
  }
  return out;
}

inline std::vector<float> noise(std::size_t n, std::uint64_t seed,
                                double amp = 0.3) {
  bts::SplitMix64 rng(seed);
  std::vector<float> out(n);
  for (auto& v : out) v = static_cast<float>(rng.next_uniform(-amp, amp));
  return out;
}

struct FixtureRecording {
  std::string stem;          // e.g. "101_1b1_Al_sc_Meditron"
  std::string split;         // "train" | "test"
  std::string annotation;    // annotation file body
  double duration_s = 5.0;
  double tone_hz = 220.0;
  int rate = 4000;
};

// Annotation body covering all four labels in [0, 4.4) seconds.
inline std::string four_label_annotation() {
  return
      "0.0\t1.0\t0\t0\n"
      "1.0\t2.2\t1\t0\n"
      "2.2\t3.0\t0\t1\n"
      "3.0\t4.4\t1\t1\n";
}

inline void write_tree(const fs::path& root,
                       const std::vector<FixtureRecording>& recordings,
                       const std::string& demographics) {
  fs::create_directories(root);
  std::string split_list;
  std::uint64_t seed = 1;
  for (const auto& r : recordings) {
    auto samples = sine(r.tone_hz, r.duration_s, r.rate);
    auto jitter = noise(samples.size(), seed++, 0.05);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] += jitter[i];
    bts::write_wav_pcm16((root / (r.stem + ".wav")).string(), samples, r.rate);
    std::ofstream ann(root / (r.stem + ".txt"));
    ann << r.annotation;
    split_list += r.stem + "\t" + r.split + "\n";
  }
  std::ofstream demo(root / "demographic_info.txt");
  demo << demographics;
  std::ofstream split(root / "split.txt");
  split << split_list;
}

// One train recording with two cycles (Normal + Wheeze).
inline void make_mini_tree(const fs::path& root) {
  write_tree(root,
             {{"101_1b1_Al_sc_Meditron", "train",
               "0.0\t1.0\t0\t0\n1.0\t2.2\t0\t1\n", 3.0, 220.0, 4000}},
             "101 3.0 F NA 19.0 99.0\n");
}

// Two recordings per split, every label present on both sides, patients
// disjoint across splits.
inline void make_full_tree(const fs::path& root) {
  write_tree(
      root,
      {
          {"101_1b1_Al_sc_Meditron", "train", four_label_annotation(), 5.0, 220.0, 4000},
          {"102_2b3_Pr_mc_Litt3200", "train", four_label_annotation(), 5.0, 330.0, 4000},
          {"130_1p1_Tc_sc_Meditron", "test", four_label_annotation(), 5.0, 180.0, 4000},
          {"226_1b1_Pl_sc_AKGC417L", "test", four_label_annotation(), 5.0, 260.0, 4000},
      },
      "101 3.0 F NA 19.0 99.0\n"
      "102 45.0 M 25.0 NA NA\n"
      "130 12.0 F NA 40.0 150.0\n"
      "226 70.0 M 28.4 NA NA\n");
}

inline fs::path split_list_path(const fs::path& root) { return root / "split.txt"; }

}  // namespace fixtures
