#include "mistake/synth.hpp"

#include <json.hpp>

#include <stdexcept>

namespace mistake::synth {

corpus::GameRecord flip_answers(const corpus::GameRecord& game, const FlipPolicy& policy,
                                util::Rng& stream) {
  if (policy.p_flip < 0.0 || policy.p_flip > 1.0)
    throw std::invalid_argument("flip_answers: p_flip must lie in [0, 1]");
  if (game.status != corpus::GameStatus::Success)
    throw std::invalid_argument("flip_answers: game " + game.game_id + " is not a Success dialogue");

  std::vector<std::size_t> yesno;
  for (std::size_t i = 0; i < game.qas.size(); ++i) {
    if (game.qas[i].answer != corpus::Answer::NA) yesno.push_back(i);
  }
  if (yesno.empty() && policy.min_flips_per_game > 0)
    throw std::invalid_argument("flip_answers: game " + game.game_id +
                                " has no Yes/No answers to satisfy min_flips_per_game");
  if (policy.min_flips_per_game > yesno.size())
    throw std::invalid_argument("flip_answers: game " + game.game_id + " has only " +
                                std::to_string(yesno.size()) + " Yes/No answers, fewer than the flip floor");

  corpus::GameRecord out = game;
  std::vector<std::size_t> unflipped;
  std::size_t flips = 0;
  for (std::size_t i : yesno) {
    if (stream.next_unit() < policy.p_flip) {
      ++flips;
      out.qas[i].answer =
          out.qas[i].answer == corpus::Answer::Yes ? corpus::Answer::No : corpus::Answer::Yes;
      out.qas[i].mistake_label = true;
    } else {
      unflipped.push_back(i);
      out.qas[i].mistake_label = false;
    }
  }
  // Top up to the per-game floor from the remaining Yes/No positions.
  while (flips < policy.min_flips_per_game) {
    std::size_t pick = static_cast<std::size_t>(stream.below(unflipped.size()));
    std::size_t i = unflipped[pick];
    unflipped.erase(unflipped.begin() + static_cast<std::ptrdiff_t>(pick));
    out.qas[i].answer =
        out.qas[i].answer == corpus::Answer::Yes ? corpus::Answer::No : corpus::Answer::Yes;
    out.qas[i].mistake_label = true;
    ++flips;
  }
  return out;
}

SynthResult generate_synthetic(std::span<const corpus::GameRecord> success_games,
                               const FlipPolicy& policy, bool strict) {
  SynthResult result;
  for (const auto& game : success_games) {
    try {
      util::Rng stream(util::hash_mix(policy.seed, util::fnv1a64(game.game_id)));
      corpus::GameRecord flipped = flip_answers(game, policy, stream);
      flipped.game_id += "-synth";
      result.games.push_back(std::move(flipped));
    } catch (const std::exception& e) {
      if (strict) throw;
      result.skipped.push_back({game.game_id, e.what()});
    }
  }
  return result;
}

std::string policy_manifest_json(const FlipPolicy& policy, std::size_t games_in, std::size_t games_out,
                                 std::size_t games_skipped) {
  nlohmann::ordered_json j;
  j["schema"] = "synthetic-manifest/1";
  j["p_flip"] = policy.p_flip;
  j["min_flips_per_game"] = policy.min_flips_per_game;
  j["seed"] = policy.seed;
  j["games_in"] = games_in;
  j["games_out"] = games_out;
  j["games_skipped"] = games_skipped;
  return j.dump(2) + "\n";
}

}  // namespace mistake::synth
