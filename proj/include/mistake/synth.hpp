#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/util.hpp"

namespace mistake::synth {

struct FlipPolicy {
  double p_flip = 0.15;               // per Yes/No answer flip probability
  std::size_t min_flips_per_game = 0;  // floor enforced after the Bernoulli pass
  std::uint64_t seed = 0;
};

/// Flips Yes/No answers of a Success game, labeling flipped answers as
/// mistakes and unflipped Yes/No answers as correct. N/A answers are left
/// untouched and carry no label. `stream` supplies the randomness; callers
/// wanting reorder-stable output should key it on (seed, game_id) the way
/// generate_synthetic does.
corpus::GameRecord flip_answers(const corpus::GameRecord& game, const FlipPolicy& policy,
                                util::Rng& stream);

struct SkippedGame {
  std::string game_id;
  std::string reason;
};

struct SynthResult {
  std::vector<corpus::GameRecord> games;
  std::vector<SkippedGame> skipped;
};

/// One synthetic game per Success input, ids suffixed "-synth". Records that
/// violate flip_answers preconditions are skipped and reported. Per-game
/// randomness is keyed on (policy.seed, game_id), so output does not depend
/// on input order.
SynthResult generate_synthetic(std::span<const corpus::GameRecord> success_games,
                               const FlipPolicy& policy, bool strict = false);

/// Sidecar manifest describing how a synthetic corpus was produced.
std::string policy_manifest_json(const FlipPolicy& policy, std::size_t games_in, std::size_t games_out,
                                 std::size_t games_skipped);

}  // namespace mistake::synth
