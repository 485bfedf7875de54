#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "bts/common.hpp"
#include "bts/metrics.hpp"
#include "bts/model.hpp"

namespace bts {

// Hyperparameters; the defaults are the reproduction configuration.
struct TrainHyperparams {
  double lr = 5e-5;
  int epochs = 50;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool freeze_encoders = false;   // train the head only
  double holdout_fraction = 0.0;  // >0 keeps the best-Score epoch on a carve-out
};

// Cosine decay from lr0 at epoch 0 to zero at total_epochs, stepped per epoch.
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs <= 0 || epoch < 0) fail(ErrorCode::InvalidConfig, "bad schedule inputs");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

// Adam over an explicit parameter/gradient pairing.
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double epsilon)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  struct Span {
    double* params;
    const double* grads;
    std::size_t n;
  };

  void step(const std::vector<Span>& spans, double lr) {
    if (m_.empty()) {
      std::size_t total = 0;
      for (const auto& s : spans) total += s.n;
      m_.assign(total, 0.0);
      v_.assign(total, 0.0);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t offset = 0;
    for (const auto& s : spans) {
      for (std::size_t i = 0; i < s.n; ++i) {
        double g = s.grads[i];
        double& m = m_[offset + i];
        double& v = v_[offset + i];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g * g;
        s.params[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + epsilon_);
      }
      offset += s.n;
    }
  }

 private:
  double beta1_, beta2_, epsilon_;
  long long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

namespace detail {

inline std::vector<AdamOptimizer::Span> trainable_spans(FusionModel& model,
                                                        ModelGradients& grads,
                                                        bool freeze_projections) {
  std::vector<AdamOptimizer::Span> spans;
  auto add = [&](std::vector<double>& p, std::vector<double>& g) {
    spans.push_back({p.data(), g.data(), p.size()});
  };
  add(model.head.W.data, grads.d_head_W.data);
  add(model.head.b, grads.d_head_b);
  if (!freeze_projections) {
    if (model.mode == FusionMode::Fused) {
      add(model.bundle.text_proj.W.data, grads.d_text_W.data);
      add(model.bundle.text_proj.b, grads.d_text_b);
    }
    add(model.bundle.audio_proj.W.data, grads.d_audio_W.data);
    add(model.bundle.audio_proj.b, grads.d_audio_b);
  }
  return spans;
}

inline void shuffle_indices(std::vector<std::size_t>& idx, SplitMix64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline std::optional<double> holdout_score(const FusionModel& model,
                                           const std::vector<TrainSample>& samples,
                                           const std::vector<std::size_t>& holdout) {
  ConfusionMatrix cm;
  for (std::size_t idx : holdout) {
    Vec logits = model_logits_from_raw(model, samples[idx]);
    cm.add(samples[idx].label, predict_label(softmax(logits)));
  }
  try {
    return icbhi_score(specificity(cm), sensitivity(cm));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EmptyClass) return std::nullopt;
    throw;
  }
}

struct WeightSnapshot {
  LinearLayer text_proj, audio_proj, head;

  static WeightSnapshot take(const FusionModel& m) {
    return {m.bundle.text_proj, m.bundle.audio_proj, m.head};
  }

  void restore(FusionModel& m) const {
    m.bundle.text_proj = text_proj;
    m.bundle.audio_proj = audio_proj;
    m.head = head;
  }
};

}  // namespace detail

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::vector<EpochLog> log;
  // Final-epoch weights are kept unless holdout selection picked an earlier
  // epoch; -1 means no selection happened.
  int best_epoch = -1;
};

// Fine-tunes the trainable tensors with Adam under the cosine schedule.
// Deterministic in (seed, data order): the per-epoch shuffle is the only
// consumer of randomness. A finite-difference probe on the first batch
// guards the gradient path before any update.
inline FitResult fit(FusionModel& model, const std::vector<TrainSample>& samples,
                     const TrainHyperparams& hp, std::uint64_t seed) {
  if (samples.empty()) fail(ErrorCode::InvalidConfig, "no training samples");
  if (hp.epochs < 1 || hp.batch_size < 1 || hp.lr <= 0.0) {
    fail(ErrorCode::InvalidConfig, "epochs/batch_size/lr out of range");
  }

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // optional validation carve-out, disabled for reproduction runs
  std::vector<std::size_t> holdout;
  if (hp.holdout_fraction > 0.0) {
    SplitMix64 rng(mix_seed(seed, "holdout"));
    detail::shuffle_indices(order, rng);
    auto n_holdout = static_cast<std::size_t>(
        std::floor(hp.holdout_fraction * static_cast<double>(order.size())));
    n_holdout = std::min(n_holdout, order.size() - 1);
    holdout.assign(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
    order.resize(order.size() - n_holdout);
  }

  // pre-flight gradient sanity on the first batch
  {
    std::vector<std::size_t> first(
        order.begin(),
        order.begin() + std::min(order.size(), static_cast<std::size_t>(hp.batch_size)));
    double err = gradient_check(model, samples, first, hp.freeze_encoders);
    if (!(err < 1e-4)) {
      fail(ErrorCode::GradientCheckFailed,
           "pre-flight gradient check error " + std::to_string(err));
    }
  }

  AdamOptimizer adam(hp.beta1, hp.beta2, hp.epsilon);
  SplitMix64 shuffle_rng(mix_seed(seed, "shuffle"));
  FitResult result;
  double best_score = -1.0;
  std::optional<detail::WeightSnapshot> best_weights;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    double lr = cosine_lr(hp.lr, epoch, hp.epochs);
    detail::shuffle_indices(order, shuffle_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      auto step = batch_loss_and_grads(model, samples, batch, hp.freeze_encoders);
      if (!std::isfinite(step.loss)) {
        fail(ErrorCode::DivergedLoss,
             "non-finite loss at epoch " + std::to_string(epoch));
      }
      auto spans = detail::trainable_spans(model, step.grads, hp.freeze_encoders);
      adam.step(spans, lr);
      loss_sum += step.loss;
      ++batches;
    }
    result.log.push_back({epoch, loss_sum / batches, lr});

    if (!holdout.empty()) {
      auto score = detail::holdout_score(model, samples, holdout);
      if (score && *score > best_score) {
        best_score = *score;
        best_weights = detail::WeightSnapshot::take(model);
        result.best_epoch = epoch;
      }
    }
  }

  if (best_weights) best_weights->restore(model);
  return result;
}

}  // namespace bts
