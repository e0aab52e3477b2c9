#pragma once

#include <cstdint>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/detector.hpp"

namespace mistake::fixtures {

/// Deterministic labeled corpus with 431 mistaken answers, 231 of them on
/// final turns, spread over dialogues of varying length.
std::vector<corpus::GameRecord> turn_analysis_fixture();

struct PlantedConfig {
  std::size_t n_pretrain = 1200;
  std::size_t n_pool = 320;
  std::size_t n_same_test = 120;
  std::size_t n_diff = 160;
  std::size_t feature_dim = 8;
  std::size_t planted_dim = 0;  // this component carries the label: +1 flipped, -1 not
  double positive_rate = 0.3;
  std::uint64_t seed = 17;
};

struct PlantedFixture {
  std::vector<corpus::GameRecord> pretrain;   // Success games, machine labels
  std::vector<corpus::GameRecord> pool;       // fine-tune pool (same images as pretrain)
  std::vector<corpus::GameRecord> same_test;  // held-out same-image test
  std::vector<corpus::GameRecord> diff;       // different-image test
  detector::FeatureStore store;
};

/// Learnability fixture: label state is constant within a game, and the
/// designated feature-store dimension of the game's image and object vectors
/// encodes it, so a working training loop must reach near-perfect F.
PlantedFixture planted_fixture(const PlantedConfig& cfg = {});

}  // namespace mistake::fixtures
