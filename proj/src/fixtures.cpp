#include "mistake/fixtures.hpp"

#include <cmath>
#include <iterator>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::fixtures {

namespace {

corpus::GameRecord base_game(const std::string& game_id, const std::string& image_id,
                             corpus::GameStatus status) {
  corpus::GameRecord g;
  g.game_id = game_id;
  g.image = {image_id, 640.0, 480.0, image_id};
  g.objects = {{"obj-1", "donut", {80.0, 60.0, 320.0, 240.0}},
               {"obj-2", "plate", {420.0, 300.0, 120.0, 100.0}}};
  g.target_object_id = "obj-1";
  g.status = status;
  return g;
}

}  // namespace

std::vector<corpus::GameRecord> turn_analysis_fixture() {
  std::vector<corpus::GameRecord> games;
  games.reserve(431);
  // Dialogue lengths cycle 2..8 so every normalized-turn bin gets mass.
  auto total_for = [](std::size_t i) { return 2 + i % 7; };

  // 231 games with exactly one mistake on the final turn.
  for (std::size_t i = 0; i < 231; ++i) {
    corpus::GameRecord g = base_game("turnfix-last-" + std::to_string(i),
                                     "turnfix-img-" + std::to_string(i), corpus::GameStatus::Failure);
    const std::size_t total = total_for(i);
    for (std::size_t t = 0; t < total; ++t) {
      corpus::QAPair qa;
      qa.question = "Is it on the left side?";
      qa.answer = t % 2 == 0 ? corpus::Answer::Yes : corpus::Answer::No;
      qa.mistake_label = (t + 1 == total);
      g.qas.push_back(std::move(qa));
    }
    games.push_back(std::move(g));
  }
  // 200 games with exactly one mistake strictly before the final turn.
  for (std::size_t i = 0; i < 200; ++i) {
    corpus::GameRecord g = base_game("turnfix-mid-" + std::to_string(i),
                                     "turnfix-img-mid-" + std::to_string(i), corpus::GameStatus::Failure);
    const std::size_t total = total_for(i);
    const std::size_t mistake_at = i % (total - 1);  // 0-based, never the last turn
    for (std::size_t t = 0; t < total; ++t) {
      corpus::QAPair qa;
      qa.question = "Is it red?";
      qa.answer = t % 2 == 0 ? corpus::Answer::No : corpus::Answer::Yes;
      qa.mistake_label = (t == mistake_at);
      g.qas.push_back(std::move(qa));
    }
    games.push_back(std::move(g));
  }
  return games;
}

namespace {

// Question pool spanning several keyword categories, so question-type
// oversampling and the question-type architecture both get exercised.
const char* kQuestions[] = {
    "Is it on the left side?", "Is it red?",           "Is it a car?",
    "Is it small?",            "Is it round?",         "Is it made of metal?",
    "Are they wearing jeans?", "Is the object electronic?", "Is it edible?",
};

corpus::GameRecord planted_game(const std::string& game_id, const std::string& image_id, bool flipped,
                                std::size_t n_qas, corpus::GameStatus status, util::Rng& rng) {
  corpus::GameRecord g = base_game(game_id, image_id, status);
  for (std::size_t t = 0; t < n_qas; ++t) {
    corpus::QAPair qa;
    qa.question = kQuestions[rng.below(std::size(kQuestions))];
    qa.answer = rng.below(2) == 0 ? corpus::Answer::Yes : corpus::Answer::No;
    qa.mistake_label = flipped;  // label state is game-wide by construction
    g.qas.push_back(std::move(qa));
  }
  return g;
}

void plant_features(detector::FeatureStore& store, const corpus::GameRecord& g, bool flipped,
                    const PlantedConfig& cfg, std::uint64_t seed) {
  const double mark = flipped ? 1.0 : -1.0;
  for (const std::string& key : {detector::image_feature_key(g), detector::object_feature_key(g)}) {
    util::Rng rng(util::hash_mix(seed, util::fnv1a64(key)));
    std::vector<double> v(cfg.feature_dim);
    for (double& x : v) x = rng.uniform(-0.2, 0.2);
    v[cfg.planted_dim] = mark;
    store.put(key, std::move(v));
  }
}

}  // namespace

PlantedFixture planted_fixture(const PlantedConfig& cfg) {
  if (cfg.planted_dim >= cfg.feature_dim)
    throw std::invalid_argument("planted_fixture: planted_dim out of range");
  detector::FeatureStore store(cfg.feature_dim);
  PlantedFixture fx{{}, {}, {}, {}, std::move(store)};
  util::Rng rng(cfg.seed);

  std::vector<bool> pretrain_flipped(cfg.n_pretrain);
  for (std::size_t i = 0; i < cfg.n_pretrain; ++i) {
    const bool flipped = rng.next_unit() < cfg.positive_rate;
    pretrain_flipped[i] = flipped;
    corpus::GameRecord g = planted_game("planted-pre-" + std::to_string(i),
                                        "planted-img-" + std::to_string(i), flipped, 1 + i % 3,
                                        corpus::GameStatus::Success, rng);
    plant_features(fx.store, g, flipped, cfg, cfg.seed);
    fx.pretrain.push_back(std::move(g));
  }
  // Same-image games reuse pretraining images, and therefore inherit the
  // image's planted label state.
  auto make_same = [&](std::vector<corpus::GameRecord>& dst, const char* stem, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = rng.below(cfg.n_pretrain);
      dst.push_back(planted_game(std::string(stem) + std::to_string(i),
                                 "planted-img-" + std::to_string(src), pretrain_flipped[src], 1 + i % 3,
                                 corpus::GameStatus::Failure, rng));
    }
  };
  make_same(fx.pool, "planted-pool-", cfg.n_pool);
  make_same(fx.same_test, "planted-same-", cfg.n_same_test);

  for (std::size_t i = 0; i < cfg.n_diff; ++i) {
    const bool flipped = rng.next_unit() < cfg.positive_rate;
    corpus::GameRecord g = planted_game("planted-diff-" + std::to_string(i),
                                        "planted-diffimg-" + std::to_string(i), flipped, 1 + i % 3,
                                        corpus::GameStatus::Failure, rng);
    plant_features(fx.store, g, flipped, cfg, cfg.seed);
    fx.diff.push_back(std::move(g));
  }
  return fx;
}

}  // namespace mistake::fixtures
