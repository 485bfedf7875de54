#pragma once

#include <array>
#include <string>

#include <json.hpp>

#include "bts/common.hpp"
#include "bts/types.hpp"

namespace bts {

// 4x4 counts, rows = true class, columns = predicted, class order
// [Normal, Crackle, Wheeze, Both].
struct ConfusionMatrix {
  std::array<std::array<long long, kNumClasses>, kNumClasses> m{};

  void add(int true_label, int pred_label, long long count = 1) {
    if (true_label < 0 || true_label >= kNumClasses || pred_label < 0 ||
        pred_label >= kNumClasses) {
      fail(ErrorCode::InvalidLabel, "confusion matrix index out of range");
    }
    m[static_cast<std::size_t>(true_label)][static_cast<std::size_t>(pred_label)] +=
        count;
  }

  long long row_sum(int r) const {
    long long t = 0;
    for (auto v : m[static_cast<std::size_t>(r)]) t += v;
    return t;
  }

  long long total() const {
    long long t = 0;
    for (int r = 0; r < kNumClasses; ++r) t += row_sum(r);
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : m) rows.push_back(row);
    return rows;
  }

  static ConfusionMatrix from_json(const nlohmann::json& j) {
    ConfusionMatrix cm;
    for (int r = 0; r < kNumClasses; ++r) {
      for (int c = 0; c < kNumClasses; ++c) {
        cm.m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
            j.at(r).at(c).get<long long>();
      }
    }
    return cm;
  }
};

// Fraction of Normal cycles predicted Normal, as a percentage.
inline double specificity(const ConfusionMatrix& cm) {
  const int n = static_cast<int>(LungSound::Normal);
  long long total = cm.row_sum(n);
  if (total == 0) fail(ErrorCode::EmptyClass, "no Normal cycles in matrix");
  return 100.0 * static_cast<double>(cm.m[n][n]) / static_cast<double>(total);
}

// Fraction of adventitious cycles assigned their exact adventitious class
// (Crackle as Wheeze counts as a miss), as a percentage.
inline double sensitivity(const ConfusionMatrix& cm) {
  long long correct = 0;
  long long total = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    correct += cm.m[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    total += cm.row_sum(c);
  }
  if (total == 0) fail(ErrorCode::EmptyClass, "no adventitious cycles in matrix");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

inline double icbhi_score(double sp, double se) { return (sp + se) / 2.0; }

}  // namespace bts
