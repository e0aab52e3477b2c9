#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/eval.hpp"
#include "mistake/nn.hpp"
#include "mistake/qtype.hpp"

namespace mistake::detector {

enum class Architecture { Baseline, QATurn, QuestionType };

std::string_view to_string(Architecture a);
std::optional<Architecture> architecture_from_string(std::string_view s);

/// Either a file-backed key -> vector map or a deterministic pseudo-feature
/// generator (seeded hash of the key, unit-norm) for tests and demos.
class FeatureStore {
 public:
  static FeatureStore pseudo(std::size_t dim, std::uint64_t seed);
  static FeatureStore load(const std::string& path);
  explicit FeatureStore(std::size_t dim);

  std::size_t dim() const { return dim_; }
  bool contains(const std::string& key) const;
  std::vector<double> get(const std::string& key) const;  // throws on a missing key
  void put(std::string key, std::vector<double> v);
  void save(const std::string& path) const;

 private:
  std::size_t dim_ = 0;
  bool pseudo_ = false;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, std::vector<double>> map_;
};

/// [x_min, y_min, x_max, y_max, x_center, y_center, w_box, h_box], both axes
/// mapped to [-1, 1].
struct SpatialFeatures {
  std::array<double, 8> v{};
  bool operator==(const SpatialFeatures&) const = default;
};

SpatialFeatures spatial_features(const corpus::BBox& bbox, const corpus::ImageInfo& image);

struct ModelConfig {
  Architecture architecture = Architecture::Baseline;
  std::size_t feature_dim = 64;  // I_emb / S_emb width, must match the store
  std::size_t word_emb_dim = 64;
  std::size_t lstm_hidden_dim = 128;
  std::size_t answer_emb_dim = 16;
  std::size_t qtype_emb_dim = 8;
  std::size_t turn_emb_dim = 8;
  std::vector<std::size_t> mlp_m_hidden{256};
  std::size_t q_mean_dim = 128;
  std::vector<std::size_t> mlp_c_hidden{64};
  std::size_t vocab_size = 0;  // filled when the model is built
  double threshold = 0.5;

  /// Dims <= 8; small enough for exhaustive finite-difference checks.
  static ModelConfig tiny(Architecture arch);
};

struct Vocabulary {
  std::vector<std::string> tokens;  // tokens[0] is the unknown token
  std::unordered_map<std::string, std::size_t> index;

  static Vocabulary build(std::span<const corpus::GameRecord> games);
  std::size_t lookup(const std::string& token) const;
  std::size_t size() const { return tokens.size(); }
};

/// Architecture-specific extra input; passing the wrong variant is an error,
/// never a silent no-op.
using Extra = std::variant<std::monostate, qtype::QuestionType, double>;

int classify(double p_m, double threshold);

class DetectorModel {
 public:
  DetectorModel(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  /// Final hidden state of the question LSTM over the token sequence.
  nn::Tape::Node encode_question(nn::Tape& tape, std::span<const std::string> tokens) const;

  struct LstmIds {
    nn::ParamId wx, wh, b;
  };
  LstmIds lstm_ids() const { return {lstm_wx_, lstm_wh_, lstm_b_}; }
  nn::ParamId word_embedding_id() const { return word_emb_; }

  /// Builds the forward graph on `tape` and returns the p_m node.
  nn::Tape::Node build_forward(nn::Tape& tape, std::span<const double> i_emb,
                               std::span<const double> s_emb, const SpatialFeatures& spatial,
                               std::span<const std::string> tokens, corpus::Answer answer,
                               const Extra& extra) const;

  /// Convenience inference wrapper; pure in the parameters.
  double forward(std::span<const double> i_emb, std::span<const double> s_emb,
                 const SpatialFeatures& spatial, std::span<const std::string> tokens,
                 corpus::Answer answer, const Extra& extra) const;

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static DetectorModel load(std::istream& in);
  static DetectorModel load_file(const std::string& path);

 private:
  void wire(std::uint64_t seed);

  ModelConfig cfg_;
  Vocabulary vocab_;
  nn::ParameterStore params_;
  nn::ParamId word_emb_ = 0, lstm_wx_ = 0, lstm_wh_ = 0, lstm_b_ = 0, answer_emb_ = 0;
  nn::ParamId qtype_emb_ = 0, turn_w_ = 0, turn_b_ = 0;
  std::vector<std::pair<nn::ParamId, nn::ParamId>> mlp_m_, mlp_c_;  // (W, b) per layer
};

/// One labeled Yes/No answer with everything the detectors consume.
struct TrainExample {
  std::string image_key;
  std::string object_key;
  SpatialFeatures spatial;
  std::vector<std::string> tokens;
  corpus::Answer answer = corpus::Answer::Yes;
  qtype::QuestionType question_type = qtype::QuestionType::Others;
  std::size_t turn_current = 1;
  std::size_t turn_total = 1;
  int label = 0;
};

std::string image_feature_key(const corpus::GameRecord& game);
std::string object_feature_key(const corpus::GameRecord& game);

/// Examples from every Yes/No QA; absent mistake labels count as correct.
std::vector<TrainExample> make_examples(std::span<const corpus::GameRecord> games,
                                        const qtype::KeywordTable& table);

/// Feature keys referenced by `examples` that `store` cannot serve.
std::vector<std::string> missing_feature_keys(std::span<const TrainExample> examples,
                                              const FeatureStore& store);

enum class OversampleMode { None, ClassBalance, QTypeBalance };

std::string_view to_string(OversampleMode m);
std::optional<OversampleMode> oversample_from_string(std::string_view s);

/// Duplicates samples until the balanced categories match; the originals are
/// always a prefix of the output.
std::vector<TrainExample> oversample(std::span<const TrainExample> samples, OversampleMode mode,
                                     std::uint64_t seed);

struct TrainConfig {
  double pretrain_lr = 1e-4;
  double finetune_lr = 1e-5;
  std::size_t k = 4;
  std::size_t pretrain_epochs = 5;
  std::size_t finetune_epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  OversampleMode oversample_mode = OversampleMode::QTypeBalance;
  std::size_t patience = 3;  // epochs without validation-F improvement; 0 disables
  double train_fraction = 0.70;
  double val_fraction = 0.15;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  eval::Confusion val;
  double val_f = 0.0;
};

struct PretrainResult {
  DetectorModel model;  // best-validation-F snapshot
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
};

PretrainResult pretrain(const DetectorModel& init, std::span<const corpus::GameRecord> synthetic,
                        const FeatureStore& store, const qtype::KeywordTable& table,
                        const TrainConfig& cfg);

struct Evaluation {
  eval::Confusion overall;
  eval::Confusion last_turn;
  eval::Confusion other_turns;
  std::vector<int> predictions;
};

Evaluation evaluate(const DetectorModel& model, std::span<const TrainExample> examples,
                    const FeatureStore& store);

struct FoldOutcome {
  Evaluation validation;
  Evaluation same_test;
  Evaluation diff_test;
  std::vector<std::string> flags;
};

struct KfoldResult {
  std::vector<FoldOutcome> folds;
  // Pooled confusions over folds; the per-fold F means reported alongside.
  eval::Confusion validation, same_test, diff_test;
  eval::Confusion same_last, same_other, diff_last, diff_other;
  double mean_val_f = 0.0, mean_same_f = 0.0, mean_diff_f = 0.0;
  std::vector<std::string> flags;
};

KfoldResult finetune_kfold(const DetectorModel& checkpoint, std::span<const corpus::GameRecord> pool,
                           std::span<const corpus::GameRecord> same_test,
                           std::span<const corpus::GameRecord> diff_test, const FeatureStore& store,
                           const qtype::KeywordTable& table, const TrainConfig& cfg);

}  // namespace mistake::detector
