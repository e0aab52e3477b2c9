#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/qtype.hpp"

namespace mistake::stats {

/// Right-closed histogram over normalized turns: bin i covers
/// (i/n_bins, (i+1)/n_bins].
struct TurnHistogram {
  std::size_t n_bins = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total() const;
};

/// Row 0 = incorrect answers, row 1 = correct answers; one column per
/// question type actually reported.
struct ContingencyTable {
  std::vector<std::string> col_labels;
  std::vector<std::vector<std::uint64_t>> cells;  // cells[row][col]

  std::size_t rows() const { return cells.size(); }
  std::size_t cols() const { return cells.empty() ? 0 : cells.front().size(); }
  std::vector<std::uint64_t> row_margins() const;
  std::vector<std::uint64_t> col_margins() const;
  std::uint64_t total() const;
};

struct TypeRate {
  std::uint64_t mistakes = 0;
  std::uint64_t total = 0;
  std::optional<double> rate;  // absent when total = 0
};

using MistakeRateReport = std::map<qtype::QuestionType, TypeRate>;

/// current/total for 1-based turns; lies in (0, 1].
double normalized_turn(std::size_t current, std::size_t total);

TurnHistogram mistake_turn_histogram(std::span<const corpus::GameRecord> games, std::size_t n_bins);

/// Fraction of labeled mistakes that occur on a dialogue's final turn.
double last_turn_fraction(std::span<const corpus::GameRecord> games);

MistakeRateReport mistake_rate_by_type(std::span<const corpus::GameRecord> games,
                                       const qtype::KeywordTable& table);

ContingencyTable build_contingency(std::span<const corpus::GameRecord> games,
                                   const qtype::KeywordTable& table);

struct FisherOptions {
  std::uint64_t enum_cap = 10'000'000;  // bound on tables visited by full enumeration
};

/// Thrown when the margin-consistent table space exceeds the enumeration cap.
struct EnumerationCapExceeded : std::runtime_error {
  explicit EnumerationCapExceeded(const std::string& what) : std::runtime_error(what) {}
};

/// Exact p-value: total probability, under the margin-conditional
/// multivariate hypergeometric null, of tables no more probable than the
/// observed one. Zero rows/columns are dropped first (they admit a single
/// configuration and carry no information).
double fisher_exact(const ContingencyTable& table, const FisherOptions& opts = {});

struct McResult {
  double p = 1.0;
  bool degenerate = false;  // margins admit only one table; p forced to 1
};

/// Monte Carlo p-value with the add-one estimator (1 + #{as extreme}) / (B + 1),
/// sampling tables from the margin-conditional null. Replicate b draws from an
/// independent stream keyed by (seed, b).
McResult fisher_mc(const ContingencyTable& table, std::uint64_t replicates, std::uint64_t seed);

}  // namespace mistake::stats
