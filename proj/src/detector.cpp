#include "mistake/detector.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mistake/stats.hpp"
#include "mistake/util.hpp"

namespace mistake::detector {

using json = nlohmann::ordered_json;

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Baseline: return "baseline";
    case Architecture::QATurn: return "qa-turn";
    case Architecture::QuestionType: return "question-type";
  }
  return "baseline";
}

std::optional<Architecture> architecture_from_string(std::string_view s) {
  if (s == "baseline") return Architecture::Baseline;
  if (s == "qa-turn") return Architecture::QATurn;
  if (s == "question-type") return Architecture::QuestionType;
  return std::nullopt;
}

FeatureStore::FeatureStore(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("FeatureStore: dim must be positive");
}

FeatureStore FeatureStore::pseudo(std::size_t dim, std::uint64_t seed) {
  FeatureStore s(dim);
  s.pseudo_ = true;
  s.seed_ = seed;
  return s;
}

FeatureStore FeatureStore::load(const std::string& path) {
  util::LineReader reader(path);
  std::string line;
  if (!reader.next(line)) throw std::runtime_error("feature store " + path + " is empty");
  json header = json::parse(line);
  if (!header.contains("dim")) throw std::runtime_error("feature store " + path + ": missing dim header");
  FeatureStore s(header.at("dim").get<std::size_t>());
  std::size_t line_no = 1;
  while (reader.next(line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line);
    std::vector<double> v = j.at("vector").get<std::vector<double>>();
    if (v.size() != s.dim_)
      throw std::runtime_error("feature store " + path + " line " + std::to_string(line_no) +
                               ": vector length != dim");
    s.map_[j.at("key").get<std::string>()] = std::move(v);
  }
  return s;
}

bool FeatureStore::contains(const std::string& key) const {
  return pseudo_ || map_.count(key) > 0;
}

std::vector<double> FeatureStore::get(const std::string& key) const {
  if (auto it = map_.find(key); it != map_.end()) return it->second;
  if (!pseudo_) throw std::runtime_error("feature store: missing key " + key);
  util::Rng rng(util::hash_mix(seed_, util::fnv1a64(key)));
  std::vector<double> v(dim_);
  double norm2 = 0;
  for (double& x : v) {
    x = rng.uniform(-1.0, 1.0);
    norm2 += x * x;
  }
  double norm = std::sqrt(norm2);
  if (norm > 0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

void FeatureStore::put(std::string key, std::vector<double> v) {
  if (v.size() != dim_) throw std::invalid_argument("FeatureStore::put: vector length != dim");
  map_[std::move(key)] = std::move(v);
}

void FeatureStore::save(const std::string& path) const {
  std::ostringstream out;
  json header;
  header["dim"] = dim_;
  out << header.dump() << '\n';
  std::vector<std::string> keys;
  keys.reserve(map_.size());
  for (const auto& [k, v] : map_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) {
    json j;
    j["key"] = k;
    j["vector"] = map_.at(k);
    out << j.dump() << '\n';
  }
  util::write_file_atomic(path, out.str());
}

SpatialFeatures spatial_features(const corpus::BBox& bbox, const corpus::ImageInfo& image) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("spatial_features: degenerate image dimensions");
  auto nx = [&](double px) { return 2.0 * px / image.width - 1.0; };
  auto ny = [&](double px) { return 2.0 * px / image.height - 1.0; };
  SpatialFeatures f;
  const double x_min = nx(bbox.x), x_max = nx(bbox.x + bbox.w);
  const double y_min = ny(bbox.y), y_max = ny(bbox.y + bbox.h);
  f.v = {x_min,
         y_min,
         x_max,
         y_max,
         (x_min + x_max) / 2.0,
         (y_min + y_max) / 2.0,
         x_max - x_min,
         y_max - y_min};
  return f;
}

ModelConfig ModelConfig::tiny(Architecture arch) {
  ModelConfig c;
  c.architecture = arch;
  c.feature_dim = 4;
  c.word_emb_dim = 4;
  c.lstm_hidden_dim = 5;
  c.answer_emb_dim = 3;
  c.qtype_emb_dim = 3;
  c.turn_emb_dim = 2;
  c.mlp_m_hidden = {7};
  c.q_mean_dim = 6;
  c.mlp_c_hidden = {5};
  c.threshold = 0.5;
  return c;
}

Vocabulary Vocabulary::build(std::span<const corpus::GameRecord> games) {
  Vocabulary v;
  v.tokens.push_back("<unk>");
  v.index["<unk>"] = 0;
  for (const auto& g : games) {
    for (const auto& qa : g.qas) {
      for (const auto& tok : qtype::normalize_question(qa.question)) {
        if (v.index.emplace(tok, v.tokens.size()).second) v.tokens.push_back(tok);
      }
    }
  }
  return v;
}

std::size_t Vocabulary::lookup(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? 0 : it->second;
}

int classify(double p_m, double threshold) { return p_m > threshold ? 1 : 0; }

DetectorModel::DetectorModel(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(config)), vocab_(std::move(vocab)) {
  if (vocab_.size() == 0) throw std::invalid_argument("DetectorModel: empty vocabulary");
  cfg_.vocab_size = vocab_.size();
  if (!(cfg_.threshold > 0.0 && cfg_.threshold < 1.0))
    throw std::invalid_argument("DetectorModel: threshold must lie in (0, 1)");
  wire(seed);
}

void DetectorModel::wire(std::uint64_t seed) {
  util::Rng rng(seed);
  const std::size_t h = cfg_.lstm_hidden_dim;

  word_emb_ = params_.add("word_emb", nn::uniform_init({cfg_.vocab_size, cfg_.word_emb_dim}, 0.1, rng));
  lstm_wx_ = params_.add("lstm_wx", nn::glorot_uniform(4 * h, cfg_.word_emb_dim, rng));
  lstm_wh_ = params_.add("lstm_wh", nn::glorot_uniform(4 * h, h, rng));
  nn::Tensor lstm_bias = nn::Tensor::zeros({4 * h});
  for (std::size_t k = 0; k < h; ++k) lstm_bias[h + k] = 1.0;  // forget gate
  lstm_b_ = params_.add("lstm_b", std::move(lstm_bias));
  answer_emb_ = params_.add("answer_emb", nn::uniform_init({3, cfg_.answer_emb_dim}, 0.1, rng));

  std::size_t mlp_m_in = 2 * cfg_.feature_dim + 8 + h;
  if (cfg_.architecture == Architecture::QuestionType) {
    qtype_emb_ = params_.add("qtype_emb", nn::uniform_init({qtype::kNumQuestionTypes, cfg_.qtype_emb_dim}, 0.1, rng));
    mlp_m_in += cfg_.qtype_emb_dim;
  } else if (cfg_.architecture == Architecture::QATurn) {
    turn_w_ = params_.add("turn_w", nn::glorot_uniform(cfg_.turn_emb_dim, 1, rng));
    turn_b_ = params_.add("turn_b", nn::Tensor::zeros({cfg_.turn_emb_dim}));
    mlp_m_in += cfg_.turn_emb_dim;
  }

  auto build_mlp = [&](const char* stem, std::size_t in, const std::vector<std::size_t>& hidden,
                       std::size_t out, std::vector<std::pair<nn::ParamId, nn::ParamId>>& layers) {
    std::size_t prev = in;
    std::size_t idx = 0;
    for (std::size_t hdim : hidden) {
      std::string base = std::string(stem) + std::to_string(idx++);
      layers.emplace_back(params_.add(base + "_w", nn::glorot_uniform(hdim, prev, rng)),
                          params_.add(base + "_b", nn::Tensor::zeros({hdim})));
      prev = hdim;
    }
    std::string base = std::string(stem) + std::to_string(idx);
    layers.emplace_back(params_.add(base + "_w", nn::glorot_uniform(out, prev, rng)),
                        params_.add(base + "_b", nn::Tensor::zeros({out})));
  };
  build_mlp("mlp_m", mlp_m_in, cfg_.mlp_m_hidden, cfg_.q_mean_dim, mlp_m_);
  build_mlp("mlp_c", cfg_.q_mean_dim + cfg_.answer_emb_dim, cfg_.mlp_c_hidden, 1, mlp_c_);
}

nn::Tape::Node DetectorModel::encode_question(nn::Tape& tape, std::span<const std::string> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("encode_question: empty token sequence");
  nn::Tape::LstmState state = tape.lstm_initial(cfg_.lstm_hidden_dim);
  for (const auto& tok : tokens) {
    nn::Tape::Node x = tape.embedding(word_emb_, vocab_.lookup(tok));
    state = tape.lstm_step(x, state, lstm_wx_, lstm_wh_, lstm_b_);
  }
  return state.h;
}

namespace {
std::size_t answer_row(corpus::Answer a) {
  switch (a) {
    case corpus::Answer::Yes: return 0;
    case corpus::Answer::No: return 1;
    case corpus::Answer::NA: return 2;
  }
  return 2;
}

std::size_t qtype_row(qtype::QuestionType t) {
  const auto all = qtype::all_types();
  return static_cast<std::size_t>(std::find(all.begin(), all.end(), t) - all.begin());
}
}  // namespace

nn::Tape::Node DetectorModel::build_forward(nn::Tape& tape, std::span<const double> i_emb,
                                            std::span<const double> s_emb,
                                            const SpatialFeatures& spatial,
                                            std::span<const std::string> tokens, corpus::Answer answer,
                                            const Extra& extra) const {
  if (i_emb.size() != cfg_.feature_dim || s_emb.size() != cfg_.feature_dim)
    throw std::invalid_argument("forward: feature dims do not match the model config");
  switch (cfg_.architecture) {
    case Architecture::Baseline:
      if (!std::holds_alternative<std::monostate>(extra))
        throw std::invalid_argument("forward: baseline model takes no extra input");
      break;
    case Architecture::QuestionType:
      if (!std::holds_alternative<qtype::QuestionType>(extra))
        throw std::invalid_argument("forward: question-type model requires a question type input");
      break;
    case Architecture::QATurn:
      if (!std::holds_alternative<double>(extra))
        throw std::invalid_argument("forward: qa-turn model requires a normalized turn input");
      break;
  }

  nn::Tape::Node q_emb = encode_question(tape, tokens);
  std::vector<nn::Tape::Node> parts;
  parts.push_back(tape.input(nn::Tensor::vec({i_emb.begin(), i_emb.end()})));
  parts.push_back(tape.input(nn::Tensor::vec({s_emb.begin(), s_emb.end()})));
  parts.push_back(tape.input(nn::Tensor::vec({spatial.v.begin(), spatial.v.end()})));
  parts.push_back(q_emb);
  if (cfg_.architecture == Architecture::QuestionType) {
    parts.push_back(tape.embedding(qtype_emb_, qtype_row(std::get<qtype::QuestionType>(extra))));
  } else if (cfg_.architecture == Architecture::QATurn) {
    double turn = std::get<double>(extra);
    if (!(turn > 0.0 && turn <= 1.0))
      throw std::invalid_argument("forward: normalized turn must lie in (0, 1]");
    nn::Tape::Node t = tape.input(nn::Tensor::vec({turn}));
    parts.push_back(tape.tanh(tape.affine(turn_w_, turn_b_, t)));
  }

  nn::Tape::Node x = tape.concat(parts);
  for (std::size_t l = 0; l < mlp_m_.size(); ++l) {
    x = tape.affine(mlp_m_[l].first, mlp_m_[l].second, x);
    if (l + 1 < mlp_m_.size()) x = tape.tanh(x);
  }
  std::array<nn::Tape::Node, 2> head{x, tape.embedding(answer_emb_, answer_row(answer))};
  nn::Tape::Node y = tape.concat(head);
  for (std::size_t l = 0; l < mlp_c_.size(); ++l) {
    y = tape.affine(mlp_c_[l].first, mlp_c_[l].second, y);
    if (l + 1 < mlp_c_.size()) y = tape.tanh(y);
  }
  return tape.sigmoid(y);
}

double DetectorModel::forward(std::span<const double> i_emb, std::span<const double> s_emb,
                              const SpatialFeatures& spatial, std::span<const std::string> tokens,
                              corpus::Answer answer, const Extra& extra) const {
  auto& self = const_cast<DetectorModel&>(*this);  // tape only reads values, grads untouched
  nn::Tape tape(self.params_);
  return tape.scalar(build_forward(tape, i_emb, s_emb, spatial, tokens, answer, extra));
}

void DetectorModel::save(std::ostream& out) const {
  out << "mistake-checkpoint v1\n";
  json meta;
  meta["architecture"] = std::string(to_string(cfg_.architecture));
  meta["feature_dim"] = cfg_.feature_dim;
  meta["word_emb_dim"] = cfg_.word_emb_dim;
  meta["lstm_hidden_dim"] = cfg_.lstm_hidden_dim;
  meta["answer_emb_dim"] = cfg_.answer_emb_dim;
  meta["qtype_emb_dim"] = cfg_.qtype_emb_dim;
  meta["turn_emb_dim"] = cfg_.turn_emb_dim;
  meta["mlp_m_hidden"] = cfg_.mlp_m_hidden;
  meta["q_mean_dim"] = cfg_.q_mean_dim;
  meta["mlp_c_hidden"] = cfg_.mlp_c_hidden;
  meta["vocab_size"] = cfg_.vocab_size;
  meta["threshold"] = cfg_.threshold;
  out << "config " << meta.dump() << "\n";
  out << "vocab " << json(vocab_.tokens).dump() << "\n";
  params_.save(out);
}

void DetectorModel::save_file(const std::string& path) const {
  std::ostringstream ss;
  save(ss);
  util::write_file_atomic(path, ss.str());
}

DetectorModel DetectorModel::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mistake-checkpoint v1")
    throw std::runtime_error("checkpoint: bad or missing version header");
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0)
    throw std::runtime_error("checkpoint: missing config line");
  json meta = json::parse(line.substr(7));
  ModelConfig cfg;
  auto arch = architecture_from_string(meta.at("architecture").get<std::string>());
  if (!arch) throw std::runtime_error("checkpoint: unknown architecture");
  cfg.architecture = *arch;
  cfg.feature_dim = meta.at("feature_dim").get<std::size_t>();
  cfg.word_emb_dim = meta.at("word_emb_dim").get<std::size_t>();
  cfg.lstm_hidden_dim = meta.at("lstm_hidden_dim").get<std::size_t>();
  cfg.answer_emb_dim = meta.at("answer_emb_dim").get<std::size_t>();
  cfg.qtype_emb_dim = meta.at("qtype_emb_dim").get<std::size_t>();
  cfg.turn_emb_dim = meta.at("turn_emb_dim").get<std::size_t>();
  cfg.mlp_m_hidden = meta.at("mlp_m_hidden").get<std::vector<std::size_t>>();
  cfg.q_mean_dim = meta.at("q_mean_dim").get<std::size_t>();
  cfg.mlp_c_hidden = meta.at("mlp_c_hidden").get<std::vector<std::size_t>>();
  cfg.threshold = meta.at("threshold").get<double>();
  if (!std::getline(in, line) || line.rfind("vocab ", 0) != 0)
    throw std::runtime_error("checkpoint: missing vocab line");
  Vocabulary vocab;
  vocab.tokens = json::parse(line.substr(6)).get<std::vector<std::string>>();
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) vocab.index[vocab.tokens[i]] = i;
  DetectorModel model(std::move(cfg), std::move(vocab), 0);
  model.params_.load(in);
  return model;
}

DetectorModel DetectorModel::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return load(in);
}

std::string image_feature_key(const corpus::GameRecord& game) {
  return game.image.feature_key.value_or(game.image.image_id);
}

std::string object_feature_key(const corpus::GameRecord& game) {
  return image_feature_key(game) + "#" + game.target_object_id;
}

std::vector<TrainExample> make_examples(std::span<const corpus::GameRecord> games,
                                        const qtype::KeywordTable& table) {
  std::vector<TrainExample> out;
  for (const auto& g : games) {
    const SpatialFeatures sf = spatial_features(g.target().bbox, g.image);
    const std::string ikey = image_feature_key(g);
    const std::string okey = object_feature_key(g);
    for (std::size_t i = 0; i < g.qas.size(); ++i) {
      const corpus::QAPair& qa = g.qas[i];
      if (qa.answer == corpus::Answer::NA) continue;  // only Yes/No answers are judged
      TrainExample ex;
      ex.image_key = ikey;
      ex.object_key = okey;
      ex.spatial = sf;
      ex.tokens = qtype::normalize_question(qa.question);
      ex.answer = qa.answer;
      ex.question_type = qtype::classify_question(qa.question, table);
      ex.turn_current = i + 1;
      ex.turn_total = g.total_turns();
      ex.label = qa.mistake_label.value_or(false) ? 1 : 0;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<std::string> missing_feature_keys(std::span<const TrainExample> examples,
                                              const FeatureStore& store) {
  std::set<std::string> missing;
  for (const auto& ex : examples) {
    if (!store.contains(ex.image_key)) missing.insert(ex.image_key);
    if (!store.contains(ex.object_key)) missing.insert(ex.object_key);
  }
  return {missing.begin(), missing.end()};
}

std::string_view to_string(OversampleMode m) {
  switch (m) {
    case OversampleMode::None: return "none";
    case OversampleMode::ClassBalance: return "class-balance";
    case OversampleMode::QTypeBalance: return "qtype-balance";
  }
  return "none";
}

std::optional<OversampleMode> oversample_from_string(std::string_view s) {
  if (s == "none") return OversampleMode::None;
  if (s == "class-balance") return OversampleMode::ClassBalance;
  if (s == "qtype-balance") return OversampleMode::QTypeBalance;
  return std::nullopt;
}

std::vector<TrainExample> oversample(std::span<const TrainExample> samples, OversampleMode mode,
                                     std::uint64_t seed) {
  std::vector<TrainExample> out(samples.begin(), samples.end());
  if (mode == OversampleMode::None || samples.empty()) return out;
  util::Rng rng(seed);

  auto top_up = [&](const std::vector<std::size_t>& pool, std::size_t deficit) {
    for (std::size_t i = 0; i < deficit; ++i)
      out.push_back(samples[pool[static_cast<std::size_t>(rng.below(pool.size()))]]);
  };

  if (mode == OversampleMode::ClassBalance) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].label ? pos : neg).push_back(i);
    if (pos.size() == neg.size()) return out;
    if (pos.empty() || neg.empty())
      throw std::invalid_argument("oversample: a class to balance is empty");
    const auto& minority = pos.size() < neg.size() ? pos : neg;
    top_up(minority, std::max(pos.size(), neg.size()) - minority.size());
    return out;
  }

  // QTypeBalance across the types present in the sample set.
  std::map<qtype::QuestionType, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < samples.size(); ++i) by_type[samples[i].question_type].push_back(i);
  std::size_t target = 0;
  for (const auto& [t, idx] : by_type) target = std::max(target, idx.size());
  for (const auto& [t, idx] : by_type) {
    if (idx.empty()) throw std::invalid_argument("oversample: a question type to balance is empty");
    top_up(idx, target - idx.size());
  }
  return out;
}

namespace {

Extra extra_for(const ModelConfig& cfg, const TrainExample& ex) {
  switch (cfg.architecture) {
    case Architecture::Baseline: return std::monostate{};
    case Architecture::QuestionType: return ex.question_type;
    case Architecture::QATurn: return stats::normalized_turn(ex.turn_current, ex.turn_total);
  }
  return std::monostate{};
}

double train_epoch(DetectorModel& model, std::span<const TrainExample> examples,
                   const FeatureStore& store, nn::Adam& opt, std::size_t batch_size,
                   util::Rng& shuffle_rng) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng.shuffle(order);

  double loss_sum = 0.0;
  std::size_t taken = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) {
      const TrainExample& ex = examples[order[i]];
      nn::Tape tape(model.params());
      nn::Tape::Node p = model.build_forward(tape, store.get(ex.image_key), store.get(ex.object_key),
                                             ex.spatial, ex.tokens, ex.answer,
                                             extra_for(model.config(), ex));
      nn::Tape::Node loss = tape.bce_loss(p, ex.label);
      loss_sum += tape.scalar(loss);
      ++taken;
      tape.backward(loss);
    }
    // Mean gradient over the minibatch.
    const double scale = 1.0 / static_cast<double>(end - start);
    for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
      for (double& g : model.params().p(pi).grad.data) g *= scale;
    }
    opt.step(model.params());
  }
  return taken == 0 ? 0.0 : loss_sum / static_cast<double>(taken);
}

}  // namespace

Evaluation evaluate(const DetectorModel& model, std::span<const TrainExample> examples,
                    const FeatureStore& store) {
  Evaluation ev;
  std::vector<int> labels;
  std::vector<std::pair<std::size_t, std::size_t>> turns;
  for (const auto& ex : examples) {
    double p = model.forward(store.get(ex.image_key), store.get(ex.object_key), ex.spatial, ex.tokens,
                             ex.answer, extra_for(model.config(), ex));
    ev.predictions.push_back(classify(p, model.config().threshold));
    labels.push_back(ex.label);
    turns.emplace_back(ex.turn_current, ex.turn_total);
  }
  ev.overall = eval::confusion(ev.predictions, labels);
  auto [last, other] = eval::slice_last_turn(ev.predictions, labels, turns);
  ev.last_turn = last;
  ev.other_turns = other;
  return ev;
}

PretrainResult pretrain(const DetectorModel& init, std::span<const corpus::GameRecord> synthetic,
                        const FeatureStore& store, const qtype::KeywordTable& table,
                        const TrainConfig& cfg) {
  if (cfg.pretrain_lr <= 0) throw std::invalid_argument("pretrain: learning rate must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch size must be positive");
  if (cfg.train_fraction <= 0 || cfg.val_fraction < 0 || cfg.train_fraction + cfg.val_fraction > 1.0)
    throw std::invalid_argument("pretrain: bad split fractions");

  // Game-level split so no dialogue leaks across train/validation.
  std::vector<std::size_t> order(synthetic.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  util::Rng split_rng(util::hash_mix(cfg.seed, 0x70726574));
  split_rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(order.size())));
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(order.size())));
  std::vector<corpus::GameRecord> train_games, val_games;
  for (std::size_t i = 0; i < n_train; ++i) train_games.push_back(synthetic[order[i]]);
  for (std::size_t i = n_train; i < n_train + n_val; ++i) val_games.push_back(synthetic[order[i]]);

  std::vector<TrainExample> train = make_examples(train_games, table);
  std::vector<TrainExample> val = make_examples(val_games, table);
  std::vector<TrainExample> all = train;
  all.insert(all.end(), val.begin(), val.end());
  if (auto missing = missing_feature_keys(all, store); !missing.empty()) {
    std::string msg = "pretrain: feature store lacks keys:";
    for (const auto& k : missing) msg += " " + k;
    throw std::runtime_error(msg);
  }

  PretrainResult result{init, {}, 0};
  DetectorModel current = init;
  nn::Adam opt({.lr = cfg.pretrain_lr});
  util::Rng shuffle_rng(util::hash_mix(cfg.seed, 0x65706f63));
  double best_f = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    double loss = train_epoch(current, train, store, opt, cfg.batch_size, shuffle_rng);
    Evaluation ev = evaluate(current, val, store);
    double f = eval::f_score(ev.overall);
    result.epochs.push_back({epoch, loss, ev.overall, f});
    if (f > best_f) {
      best_f = f;
      since_best = 0;
      result.model = current;
      result.best_epoch = epoch;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

namespace {

double mean_fold_f(const std::vector<FoldOutcome>& folds, Evaluation FoldOutcome::* member) {
  if (folds.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : folds) s += eval::f_score((f.*member).overall);
  return s / static_cast<double>(folds.size());
}

}  // namespace

KfoldResult finetune_kfold(const DetectorModel& checkpoint, std::span<const corpus::GameRecord> pool,
                           std::span<const corpus::GameRecord> same_test,
                           std::span<const corpus::GameRecord> diff_test, const FeatureStore& store,
                           const qtype::KeywordTable& table, const TrainConfig& cfg) {
  if (cfg.finetune_lr <= 0) throw std::invalid_argument("finetune_kfold: learning rate must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("finetune_kfold: batch size must be positive");
  auto folds = corpus::kfold_split(pool, cfg.k, cfg.seed);
  std::vector<TrainExample> same_examples = make_examples(same_test, table);
  std::vector<TrainExample> diff_examples = make_examples(diff_test, table);

  KfoldResult result;
  for (std::size_t fi = 0; fi < folds.size(); ++fi) {
    std::vector<corpus::GameRecord> train_games;
    for (std::size_t fj = 0; fj < folds.size(); ++fj) {
      if (fj != fi) train_games.insert(train_games.end(), folds[fj].begin(), folds[fj].end());
    }
    std::vector<TrainExample> train = oversample(make_examples(train_games, table), cfg.oversample_mode,
                                                 util::hash_mix(cfg.seed, fi));
    std::vector<TrainExample> val = make_examples(folds[fi], table);

    FoldOutcome outcome;
    bool has_pos = false, has_neg = false;
    for (const auto& ex : val) (ex.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
      outcome.flags.push_back("fold " + std::to_string(fi) + ": validation fold has a single class");

    DetectorModel model = checkpoint;
    nn::Adam opt({.lr = cfg.finetune_lr});
    util::Rng shuffle_rng(util::hash_mix(cfg.seed, 0xf17e + fi));
    DetectorModel best = model;
    double best_f = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
      train_epoch(model, train, store, opt, cfg.batch_size, shuffle_rng);
      double f = eval::f_score(evaluate(model, val, store).overall);
      if (f > best_f) {
        best_f = f;
        since_best = 0;
        best = model;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        break;
      }
    }
    outcome.validation = evaluate(best, val, store);
    outcome.same_test = evaluate(best, same_examples, store);
    outcome.diff_test = evaluate(best, diff_examples, store);
    result.folds.push_back(std::move(outcome));
  }

  for (const auto& f : result.folds) {
    result.validation += f.validation.overall;
    result.same_test += f.same_test.overall;
    result.diff_test += f.diff_test.overall;
    result.same_last += f.same_test.last_turn;
    result.same_other += f.same_test.other_turns;
    result.diff_last += f.diff_test.last_turn;
    result.diff_other += f.diff_test.other_turns;
    result.flags.insert(result.flags.end(), f.flags.begin(), f.flags.end());
  }
  result.mean_val_f = mean_fold_f(result.folds, &FoldOutcome::validation);
  result.mean_same_f = mean_fold_f(result.folds, &FoldOutcome::same_test);
  result.mean_diff_f = mean_fold_f(result.folds, &FoldOutcome::diff_test);
  return result;
}

}  // namespace mistake::detector
