#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bts/audio.hpp"
#include "bts/common.hpp"
#include "bts/text.hpp"
#include "bts/types.hpp"

namespace bts {

using Vec = std::vector<double>;

// --- small dense linear algebra ----------------------------------------------

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  static Matrix zeros(int r, int c) {
    Matrix m;
    m.rows = r;
    m.cols = c;
    m.data.assign(static_cast<std::size_t>(r) * c, 0.0);
    return m;
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
};

inline Vec matvec(const Matrix& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.cols) {
    fail(ErrorCode::DimensionMismatch,
         "matrix expects " + std::to_string(m.cols) + " inputs, got " +
             std::to_string(x.size()));
  }
  Vec y(static_cast<std::size_t>(m.rows), 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + static_cast<std::size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
  return y;
}

struct LinearLayer {
  Matrix W;
  Vec b;

  int in_dim() const { return W.cols; }
  int out_dim() const { return W.rows; }

  Vec forward(const Vec& x) const {
    Vec y = matvec(W, x);
    for (int r = 0; r < W.rows; ++r) y[static_cast<std::size_t>(r)] += b[static_cast<std::size_t>(r)];
    return y;
  }
};

// zero bias, uniform weights in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
inline LinearLayer init_linear(int out_dim, int in_dim, std::uint64_t seed) {
  LinearLayer l;
  l.W = Matrix::zeros(out_dim, in_dim);
  l.b.assign(static_cast<std::size_t>(out_dim), 0.0);
  double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  SplitMix64 rng(seed);
  for (auto& w : l.W.data) w = rng.next_uniform(-bound, bound);
  return l;
}

// --- encoders -------------------------------------------------------------------

// Frozen feature extractors standing in front of the trainable projections.
// Stub variants let the whole train/eval stack run without any pretrained
// weights; they are deterministic in the seed.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int feature_dim() const = 0;
  virtual Vec encode(const std::string& text) const = 0;
  virtual nlohmann::json descriptor() const = 0;
};

class AudioEncoder {
 public:
  virtual ~AudioEncoder() = default;
  virtual int feature_dim() const = 0;
  virtual Vec encode(const WaveSegment& seg) const = 0;
  virtual nlohmann::json descriptor() const = 0;
};

namespace detail {

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      if (!std::isspace(c)) out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  Matrix m = Matrix::zeros(rows, cols);
  SplitMix64 rng(seed);
  for (auto& v : m.data) v = rng.next_uniform(-1.0, 1.0);
  return m;
}

}  // namespace detail

// Hashed bag-of-words features mean-pooled over tokens, pushed through a
// fixed seeded linear map.
class StubTextEncoder final : public TextEncoder {
 public:
  StubTextEncoder(int dim, std::uint64_t seed)
      : dim_(dim),
        seed_(seed),
        map_(detail::random_matrix(dim, dim, mix_seed(seed, "stub_text_map"))) {}

  int feature_dim() const override { return dim_; }

  Vec encode(const std::string& text) const override {
    auto tokens = detail::word_tokens(text);
    if (tokens.empty()) {
      fail(ErrorCode::EncoderFailure, "text encoder given empty input");
    }
    Vec pooled(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& tok : tokens) {
      SplitMix64 rng(mix_seed(seed_, fnv1a64(tok)));
      for (int i = 0; i < dim_; ++i) {
        pooled[static_cast<std::size_t>(i)] += rng.next_uniform(-1.0, 1.0);
      }
    }
    for (auto& v : pooled) v /= static_cast<double>(tokens.size());
    return matvec(map_, pooled);
  }

  nlohmann::json descriptor() const override {
    return {{"kind", "stub_text"}, {"dim", dim_}, {"seed", seed_}};
  }

 private:
  int dim_;
  std::uint64_t seed_;
  Matrix map_;
};

// Per-frame mean/RMS statistics over the standardized segment, mean-mapped
// through a fixed seeded linear map. Rejects anything that is not exactly
// 8 s at 48 kHz.
class StubAudioEncoder final : public AudioEncoder {
 public:
  static constexpr int kFrames = 64;

  StubAudioEncoder(int dim, std::uint64_t seed)
      : dim_(dim),
        seed_(seed),
        map_(detail::random_matrix(dim, 2 * kFrames,
                                   mix_seed(seed, "stub_audio_map"))) {}

  int feature_dim() const override { return dim_; }

  Vec encode(const WaveSegment& seg) const override {
    if (seg.sample_rate != kTargetSampleRate ||
        seg.samples.size() != kStandardSampleCount) {
      fail(ErrorCode::ShapeMismatch,
           "audio encoder expects " + std::to_string(kStandardSampleCount) +
               " samples at " + std::to_string(kTargetSampleRate) + " Hz, got " +
               std::to_string(seg.samples.size()) + " at " +
               std::to_string(seg.sample_rate) + " Hz");
    }
    const std::size_t frame_len = kStandardSampleCount / kFrames;
    Vec stats(2 * kFrames, 0.0);
    for (int f = 0; f < kFrames; ++f) {
      const float* frame = seg.samples.data() + static_cast<std::size_t>(f) * frame_len;
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < frame_len; ++i) {
        sum += frame[i];
        sq += static_cast<double>(frame[i]) * frame[i];
      }
      stats[static_cast<std::size_t>(2 * f)] = sum / static_cast<double>(frame_len);
      stats[static_cast<std::size_t>(2 * f + 1)] =
          std::sqrt(sq / static_cast<double>(frame_len));
    }
    return matvec(map_, stats);
  }

  nlohmann::json descriptor() const override {
    return {{"kind", "stub_audio"}, {"dim", dim_}, {"seed", seed_}};
  }

 private:
  int dim_;
  std::uint64_t seed_;
  Matrix map_;
};

// --- encoder bundle: encoders + shared-space projections ----------------------

struct EncoderBundle {
  std::shared_ptr<const TextEncoder> text_encoder;
  std::shared_ptr<const AudioEncoder> audio_encoder;
  LinearLayer text_proj;   // h_t: raw text feature -> shared space
  LinearLayer audio_proj;  // h_a: raw audio feature -> shared space
  int d = 0;               // shared embedding width
};

inline Vec embed_text(const EncoderBundle& bundle, const std::string& text) {
  if (text.empty()) fail(ErrorCode::EncoderFailure, "empty text input");
  int tokens = token_count(text);
  if (tokens > kTokenBudget) {
    fail(ErrorCode::TokenBudgetExceeded,
         "description tokenizes to " + std::to_string(tokens) + " > " +
             std::to_string(kTokenBudget) + " tokens");
  }
  return bundle.text_proj.forward(bundle.text_encoder->encode(text));
}

inline Vec embed_audio(const EncoderBundle& bundle, const WaveSegment& seg) {
  return bundle.audio_proj.forward(bundle.audio_encoder->encode(seg));
}

// --- fusion + classification ----------------------------------------------------

enum class FusionMode { Fused, AudioOnly };

inline std::string_view to_string(FusionMode m) {
  return m == FusionMode::Fused ? "fused" : "audio";
}

inline std::optional<FusionMode> fusion_mode_from_string(std::string_view s) {
  if (s == "fused") return FusionMode::Fused;
  if (s == "audio") return FusionMode::AudioOnly;
  return std::nullopt;
}

struct JointEmbedding {
  Vec z;
  FusionMode mode = FusionMode::Fused;
};

// concat(z_t, z_a), text coordinates first
inline JointEmbedding fuse(const Vec& z_text, const Vec& z_audio) {
  if (z_text.size() != z_audio.size()) {
    fail(ErrorCode::DimensionMismatch,
         "text dim " + std::to_string(z_text.size()) + " != audio dim " +
             std::to_string(z_audio.size()));
  }
  JointEmbedding j;
  j.mode = FusionMode::Fused;
  j.z.reserve(z_text.size() * 2);
  j.z.insert(j.z.end(), z_text.begin(), z_text.end());
  j.z.insert(j.z.end(), z_audio.begin(), z_audio.end());
  return j;
}

inline JointEmbedding audio_only(const Vec& z_audio) {
  return {z_audio, FusionMode::AudioOnly};
}

inline Vec softmax(const Vec& logits) {
  double m = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline Vec classify(const LinearLayer& head, const JointEmbedding& joint) {
  if (static_cast<int>(joint.z.size()) != head.in_dim()) {
    fail(ErrorCode::DimensionMismatch,
         "head expects " + std::to_string(head.in_dim()) + "-dim input, got " +
             std::to_string(joint.z.size()));
  }
  return softmax(head.forward(joint.z));
}

// first maximum wins, so ties break toward the lowest class index
inline int predict_label(const Vec& probs) {
  return static_cast<int>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// Mean cross-entropy over a batch of probability rows.
inline double ce_loss(const std::vector<Vec>& probs,
                      const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    fail(ErrorCode::DimensionMismatch, "probs/labels batch sizes differ or empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= static_cast<int>(probs[i].size())) {
      fail(ErrorCode::InvalidLabel, "label " + std::to_string(y) + " out of range");
    }
    total += -std::log(probs[i][static_cast<std::size_t>(y)]);
  }
  return total / static_cast<double>(probs.size());
}

// --- the model -------------------------------------------------------------------

struct ModelFingerprint {
  std::string encoder_source;
  int d = 0;
  FusionMode mode = FusionMode::Fused;
  std::uint64_t init_seed = 0;

  nlohmann::json to_json() const {
    return {{"encoder_source", encoder_source},
            {"d", d},
            {"mode", std::string(to_string(mode))},
            {"init_seed", init_seed}};
  }
};

struct FusionModel {
  EncoderBundle bundle;
  LinearLayer head;
  FusionMode mode = FusionMode::Fused;
  ModelFingerprint fingerprint;

  int d() const { return bundle.d; }
  int head_in_dim() const { return mode == FusionMode::Fused ? 2 * bundle.d : bundle.d; }
};

struct StubEncoderSpec {
  int d = 16;
  std::uint64_t seed = 0;
};

struct EncoderSource {
  enum class Kind { Stub, Checkpoint };
  Kind kind = Kind::Stub;
  StubEncoderSpec stub;
  std::string checkpoint_path;

  static EncoderSource make_stub(int d, std::uint64_t seed) {
    EncoderSource s;
    s.kind = Kind::Stub;
    s.stub = {d, seed};
    return s;
  }

  static EncoderSource make_checkpoint(std::string path) {
    EncoderSource s;
    s.kind = Kind::Checkpoint;
    s.checkpoint_path = std::move(path);
    return s;
  }

  std::string label() const {
    if (kind == Kind::Stub) {
      return "stub(d=" + std::to_string(stub.d) +
             ",seed=" + std::to_string(stub.seed) + ")";
    }
    return "checkpoint(" + checkpoint_path + ")";
  }
};

struct ModelConfig {
  EncoderSource encoder;
  FusionMode mode = FusionMode::Fused;
  std::uint64_t init_seed = 0;
};

// --- checkpoint file format --------------------------------------------------
//
// "BTSMODEL\n" magic, little-endian u64 header length, JSON header (encoder
// descriptors, fingerprint, tensor table), then float64 tensor payloads in
// table order.

namespace detail {

constexpr char kCheckpointMagic[9] = "BTSMODEL";

inline std::shared_ptr<const TextEncoder> text_encoder_from_descriptor(
    const nlohmann::json& j) {
  if (j.value("kind", "") == "stub_text") {
    return std::make_shared<StubTextEncoder>(j.at("dim").get<int>(),
                                             j.at("seed").get<std::uint64_t>());
  }
  fail(ErrorCode::CheckpointIncompatible,
       "unknown text encoder kind '" + j.value("kind", "") + "'");
}

inline std::shared_ptr<const AudioEncoder> audio_encoder_from_descriptor(
    const nlohmann::json& j) {
  if (j.value("kind", "") == "stub_audio") {
    return std::make_shared<StubAudioEncoder>(j.at("dim").get<int>(),
                                              j.at("seed").get<std::uint64_t>());
  }
  fail(ErrorCode::CheckpointIncompatible,
       "unknown audio encoder kind '" + j.value("kind", "") + "'");
}

}  // namespace detail

inline void save_model(const FusionModel& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["d"] = model.bundle.d;
  header["mode"] = std::string(to_string(model.mode));
  header["fingerprint"] = model.fingerprint.to_json();
  header["text_encoder"] = model.bundle.text_encoder->descriptor();
  header["audio_encoder"] = model.bundle.audio_encoder->descriptor();

  struct TensorRef {
    const char* name;
    const Matrix* m;
    const Vec* v;
  };
  const TensorRef tensors[] = {
      {"text_proj.W", &model.bundle.text_proj.W, nullptr},
      {"text_proj.b", nullptr, &model.bundle.text_proj.b},
      {"audio_proj.W", &model.bundle.audio_proj.W, nullptr},
      {"audio_proj.b", nullptr, &model.bundle.audio_proj.b},
      {"head.W", &model.head.W, nullptr},
      {"head.b", nullptr, &model.head.b},
  };
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : tensors) {
    int rows = t.m ? t.m->rows : static_cast<int>(t.v->size());
    int cols = t.m ? t.m->cols : 1;
    table.push_back({{"name", t.name}, {"rows", rows}, {"cols", cols}});
  }
  header["tensors"] = table;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write checkpoint: " + path.string());
  std::string hdr = header.dump();
  out.write(detail::kCheckpointMagic, 8);
  out.put('\n');
  std::uint64_t len = hdr.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& t : tensors) {
    const double* data = t.m ? t.m->data.data() : t.v->data();
    std::size_t n = t.m ? t.m->data.size() : t.v->size();
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(n * sizeof(double)));
  }
}

namespace detail {

struct CheckpointContents {
  nlohmann::json header;
  std::map<std::string, Matrix> tensors;
};

inline CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::CheckpointNotFound, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::CheckpointNotFound, path.string());

  char magic[9] = {};
  in.read(magic, 8);
  char nl = 0;
  in.get(nl);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0 || nl != '\n') {
    fail(ErrorCode::CheckpointIncompatible, "bad magic in " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ULL << 30)) {
    fail(ErrorCode::CheckpointIncompatible, "bad header length in " + path.string());
  }
  std::string hdr(len, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::CheckpointIncompatible, "truncated header in " + path.string());

  CheckpointContents out;
  try {
    out.header = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CheckpointIncompatible,
         "unparsable header in " + path.string() + ": " + e.what());
  }
  if (out.header.value("version", 0) != 1) {
    fail(ErrorCode::CheckpointIncompatible, "unsupported version in " + path.string());
  }
  for (const auto& t : out.header.at("tensors")) {
    int rows = t.at("rows").get<int>();
    int cols = t.at("cols").get<int>();
    if (rows <= 0 || cols <= 0) {
      fail(ErrorCode::CheckpointIncompatible, "bad tensor shape in " + path.string());
    }
    Matrix m = Matrix::zeros(rows, cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) {
      fail(ErrorCode::CheckpointIncompatible, "truncated tensors in " + path.string());
    }
    out.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  return out;
}

inline Vec tensor_as_vec(const Matrix& m) { return m.data; }

}  // namespace detail

inline FusionModel load_model(const std::filesystem::path& path) {
  auto ckpt = detail::read_checkpoint(path);
  const auto& h = ckpt.header;
  auto need = [&](const char* name) -> const Matrix& {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      fail(ErrorCode::CheckpointIncompatible,
           std::string("missing tensor '") + name + "' in " + path.string());
    }
    return it->second;
  };

  FusionModel model;
  try {
    model.bundle.d = h.at("d").get<int>();
    auto mode = fusion_mode_from_string(h.at("mode").get<std::string>());
    if (!mode) fail(ErrorCode::CheckpointIncompatible, "bad mode in " + path.string());
    model.mode = *mode;
    model.bundle.text_encoder =
        detail::text_encoder_from_descriptor(h.at("text_encoder"));
    model.bundle.audio_encoder =
        detail::audio_encoder_from_descriptor(h.at("audio_encoder"));
    const auto& fp = h.at("fingerprint");
    model.fingerprint.encoder_source = fp.at("encoder_source").get<std::string>();
    model.fingerprint.d = fp.at("d").get<int>();
    auto fp_mode = fusion_mode_from_string(fp.at("mode").get<std::string>());
    model.fingerprint.mode = fp_mode.value_or(model.mode);
    model.fingerprint.init_seed = fp.at("init_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CheckpointIncompatible,
         "malformed header in " + path.string() + ": " + e.what());
  }

  model.bundle.text_proj.W = need("text_proj.W");
  model.bundle.text_proj.b = detail::tensor_as_vec(need("text_proj.b"));
  model.bundle.audio_proj.W = need("audio_proj.W");
  model.bundle.audio_proj.b = detail::tensor_as_vec(need("audio_proj.b"));
  model.head.W = need("head.W");
  model.head.b = detail::tensor_as_vec(need("head.b"));

  if (model.bundle.text_proj.W.rows != model.bundle.d ||
      model.bundle.audio_proj.W.rows != model.bundle.d ||
      model.head.W.rows != kNumClasses ||
      model.head.W.cols !=
          (model.mode == FusionMode::Fused ? 2 * model.bundle.d : model.bundle.d)) {
    fail(ErrorCode::CheckpointIncompatible,
         "tensor shapes inconsistent with d/mode in " + path.string());
  }
  return model;
}

// Builds a ready-to-train model. The shared width d is read from the
// checkpoint when one is given, never hard-coded. Encoders and projections
// come from the checkpoint; the head is always freshly initialized from the
// seed (reloading a fully trained model is load_model's job).
inline FusionModel make_model(const ModelConfig& config) {
  if (config.encoder.kind == EncoderSource::Kind::Checkpoint) {
    FusionModel model = load_model(config.encoder.checkpoint_path);
    model.mode = config.mode;
    int in_dim =
        config.mode == FusionMode::Fused ? 2 * model.bundle.d : model.bundle.d;
    model.head = init_linear(kNumClasses, in_dim, mix_seed(config.init_seed, "head"));
    model.fingerprint.encoder_source = config.encoder.label();
    model.fingerprint.mode = config.mode;
    model.fingerprint.init_seed = config.init_seed;
    return model;
  }

  const auto& spec = config.encoder.stub;
  FusionModel model;
  model.mode = config.mode;
  model.bundle.d = spec.d;
  model.bundle.text_encoder = std::make_shared<StubTextEncoder>(spec.d, spec.seed);
  model.bundle.audio_encoder = std::make_shared<StubAudioEncoder>(spec.d, spec.seed);
  model.bundle.text_proj = init_linear(
      spec.d, model.bundle.text_encoder->feature_dim(),
      mix_seed(config.init_seed, "text_proj"));
  model.bundle.audio_proj = init_linear(
      spec.d, model.bundle.audio_encoder->feature_dim(),
      mix_seed(config.init_seed, "audio_proj"));
  model.head =
      init_linear(kNumClasses, model.head_in_dim(), mix_seed(config.init_seed, "head"));
  model.fingerprint = {config.encoder.label(), spec.d, config.mode, config.init_seed};
  return model;
}

// --- training forward/backward -------------------------------------------------

// Raw encoder outputs are cached outside the train loop; only projections and
// the head carry gradients.
struct TrainSample {
  Vec text_raw;
  Vec audio_raw;
  int label = 0;
};

struct ModelGradients {
  Matrix d_text_W;
  Vec d_text_b;
  Matrix d_audio_W;
  Vec d_audio_b;
  Matrix d_head_W;
  Vec d_head_b;

  static ModelGradients zeros_like(const FusionModel& m) {
    ModelGradients g;
    g.d_text_W = Matrix::zeros(m.bundle.text_proj.W.rows, m.bundle.text_proj.W.cols);
    g.d_text_b.assign(m.bundle.text_proj.b.size(), 0.0);
    g.d_audio_W = Matrix::zeros(m.bundle.audio_proj.W.rows, m.bundle.audio_proj.W.cols);
    g.d_audio_b.assign(m.bundle.audio_proj.b.size(), 0.0);
    g.d_head_W = Matrix::zeros(m.head.W.rows, m.head.W.cols);
    g.d_head_b.assign(m.head.b.size(), 0.0);
    return g;
  }
};

inline Vec model_logits_from_raw(const FusionModel& model, const TrainSample& s) {
  Vec z_audio = model.bundle.audio_proj.forward(s.audio_raw);
  if (model.mode == FusionMode::AudioOnly) {
    return model.head.forward(z_audio);
  }
  Vec z_text = model.bundle.text_proj.forward(s.text_raw);
  return model.head.forward(fuse(z_text, z_audio).z);
}

struct BatchResult {
  double loss = 0.0;
  std::vector<double> per_sample_loss;
  ModelGradients grads;
};

// Mean cross-entropy over the batch plus analytic gradients for every
// trainable tensor. freeze_projections leaves only the head trainable.
inline BatchResult batch_loss_and_grads(const FusionModel& model,
                                        const std::vector<TrainSample>& samples,
                                        const std::vector<std::size_t>& batch,
                                        bool freeze_projections = false) {
  if (batch.empty()) fail(ErrorCode::DimensionMismatch, "empty batch");
  BatchResult result;
  result.grads = ModelGradients::zeros_like(model);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const int d = model.bundle.d;

  for (std::size_t idx : batch) {
    const TrainSample& s = samples[idx];
    if (s.label < 0 || s.label >= kNumClasses) {
      fail(ErrorCode::InvalidLabel, "label " + std::to_string(s.label) + " out of range");
    }
    Vec z_audio = model.bundle.audio_proj.forward(s.audio_raw);
    Vec z_text;
    Vec joint;
    if (model.mode == FusionMode::Fused) {
      z_text = model.bundle.text_proj.forward(s.text_raw);
      joint = fuse(z_text, z_audio).z;
    } else {
      joint = z_audio;
    }
    Vec logits = model.head.forward(joint);

    // log-softmax for a stable loss
    double m = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - m);
    lse = m + std::log(lse);
    result.per_sample_loss.push_back(lse - logits[static_cast<std::size_t>(s.label)]);

    // d loss / d logits, scaled for the batch mean
    Vec dlogits(static_cast<std::size_t>(kNumClasses));
    for (int k = 0; k < kNumClasses; ++k) {
      double p = std::exp(logits[static_cast<std::size_t>(k)] - lse);
      dlogits[static_cast<std::size_t>(k)] =
          (p - (k == s.label ? 1.0 : 0.0)) * inv_b;
    }

    for (int k = 0; k < kNumClasses; ++k) {
      double g = dlogits[static_cast<std::size_t>(k)];
      result.grads.d_head_b[static_cast<std::size_t>(k)] += g;
      double* grow = result.grads.d_head_W.data.data() +
                     static_cast<std::size_t>(k) * model.head.W.cols;
      for (int c = 0; c < model.head.W.cols; ++c) grow[c] += g * joint[static_cast<std::size_t>(c)];
    }

    if (freeze_projections) continue;

    // back through the head into the joint embedding
    Vec djoint(joint.size(), 0.0);
    for (int k = 0; k < kNumClasses; ++k) {
      double g = dlogits[static_cast<std::size_t>(k)];
      const double* wrow =
          model.head.W.data.data() + static_cast<std::size_t>(k) * model.head.W.cols;
      for (int c = 0; c < model.head.W.cols; ++c) djoint[static_cast<std::size_t>(c)] += g * wrow[c];
    }

    auto accumulate_proj = [](const Vec& dz, const Vec& raw, Matrix& dW, Vec& db) {
      for (std::size_t r = 0; r < dz.size(); ++r) {
        db[r] += dz[r];
        double* row = dW.data.data() + r * raw.size();
        for (std::size_t c = 0; c < raw.size(); ++c) row[c] += dz[r] * raw[c];
      }
    };

    if (model.mode == FusionMode::Fused) {
      Vec dz_text(djoint.begin(), djoint.begin() + d);
      Vec dz_audio(djoint.begin() + d, djoint.end());
      accumulate_proj(dz_text, s.text_raw, result.grads.d_text_W, result.grads.d_text_b);
      accumulate_proj(dz_audio, s.audio_raw, result.grads.d_audio_W,
                      result.grads.d_audio_b);
    } else {
      accumulate_proj(djoint, s.audio_raw, result.grads.d_audio_W,
                      result.grads.d_audio_b);
    }
  }

  for (double l : result.per_sample_loss) result.loss += l;
  result.loss *= inv_b;
  return result;
}

// Central finite differences on a handful of parameter coordinates.
// Returns the worst relative error observed.
inline double gradient_check(FusionModel& model,
                             const std::vector<TrainSample>& samples,
                             const std::vector<std::size_t>& batch,
                             bool freeze_projections = false, int probes = 8,
                             std::uint64_t seed = 0x5eed) {
  auto analytic = batch_loss_and_grads(model, samples, batch, freeze_projections);

  struct Param {
    double* value;
    double grad;
  };
  std::vector<Param> params;
  auto collect = [&](Matrix& w, Vec& b, Matrix& gw, Vec& gb) {
    for (std::size_t i = 0; i < w.data.size(); ++i)
      params.push_back({&w.data[i], gw.data[i]});
    for (std::size_t i = 0; i < b.size(); ++i) params.push_back({&b[i], gb[i]});
  };
  collect(model.head.W, model.head.b, analytic.grads.d_head_W,
          analytic.grads.d_head_b);
  if (!freeze_projections) {
    if (model.mode == FusionMode::Fused) {
      collect(model.bundle.text_proj.W, model.bundle.text_proj.b,
              analytic.grads.d_text_W, analytic.grads.d_text_b);
    }
    collect(model.bundle.audio_proj.W, model.bundle.audio_proj.b,
            analytic.grads.d_audio_W, analytic.grads.d_audio_b);
  }

  SplitMix64 rng(seed);
  double worst = 0.0;
  const double h = 1e-6;
  for (int p = 0; p < probes; ++p) {
    auto& param = params[rng.next_below(params.size())];
    double saved = *param.value;
    *param.value = saved + h;
    double up = batch_loss_and_grads(model, samples, batch, freeze_projections).loss;
    *param.value = saved - h;
    double down = batch_loss_and_grads(model, samples, batch, freeze_projections).loss;
    *param.value = saved;
    double fd = (up - down) / (2.0 * h);
    double denom = std::max({std::abs(fd), std::abs(param.grad), 1e-8});
    worst = std::max(worst, std::abs(fd - param.grad) / denom);
  }
  return worst;
}

inline std::uint64_t model_weights_hash(const FusionModel& m) {
  std::uint64_t h = kFnvOffset;
  auto add = [&](const std::vector<double>& v) {
    h = fnv1a64(v.data(), v.size() * sizeof(double), h);
  };
  add(m.bundle.text_proj.W.data);
  add(m.bundle.text_proj.b);
  add(m.bundle.audio_proj.W.data);
  add(m.bundle.audio_proj.b);
  add(m.head.W.data);
  add(m.head.b);
  return h;
}

}  // namespace bts
