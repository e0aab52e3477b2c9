#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mistake::eval {

/// Positive class = mistake (label 1).
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o);
  bool operator==(const Confusion&) const = default;
};

Confusion confusion(std::span<const int> predictions, std::span<const int> labels);

// Zero denominators yield 0 by convention.
double precision(const Confusion& c);
double recall(const Confusion& c);
double f_score(const Confusion& c);
double accuracy(const Confusion& c);  // auxiliary only; not a headline metric

/// Splits one evaluation into (last turn, other turns) by current == total.
std::pair<Confusion, Confusion> slice_last_turn(std::span<const int> predictions,
                                                std::span<const int> labels,
                                                std::span<const std::pair<std::size_t, std::size_t>> turns);

struct EvalReport {
  std::string dataset;
  std::string model_tag;
  std::uint64_t seed = 0;
  Confusion overall;
  std::map<std::string, Confusion> slices;
  std::vector<std::string> flags;
};

/// One evaluated (model, learning method, dataset) cell with optional turn
/// slices; the raw material of the report grids.
struct RunMetrics {
  std::string model;     // "baseline" | "qa-turn" | "question-type"
  std::string dataset;   // "same-image" | "different-image"
  std::string learning;  // "human-mistake" | "synthetic+human-mistake"
  Confusion overall;
  std::optional<Confusion> last_turn;
  std::optional<Confusion> other_turns;
  std::vector<std::string> flags;
};

/// Renders the three result grids (architecture x dataset, turn slices,
/// learning-method ablation) as byte-stable structured text. Cells with no
/// matching run are marked missing, never invented.
std::string assemble_report(std::span<const RunMetrics> runs, std::uint64_t seed,
                            std::string_view config_hash);

}  // namespace mistake::eval
