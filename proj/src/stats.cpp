#include "mistake/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::stats {

namespace {

// Two table probabilities are treated as tied when they differ by less than
// this relative amount; absorbs lgamma round-off without ever bridging the
// gap between genuinely distinct hypergeometric probabilities at the table
// sizes full enumeration handles.
constexpr double kTieRelTol = 1e-7;

bool has_any_label(std::span<const corpus::GameRecord> games) {
  for (const auto& g : games)
    for (const auto& qa : g.qas)
      if (qa.mistake_label.has_value()) return true;
  return false;
}

bool is_mistake(const corpus::QAPair& qa) { return qa.mistake_label.value_or(false); }

/// Margins plus lgamma machinery shared by the exact and Monte Carlo paths.
struct MarginModel {
  std::vector<std::uint64_t> row_sums;  // nonzero
  std::vector<std::uint64_t> col_sums;  // nonzero
  std::vector<std::uint64_t> observed;  // row-major cells of the compacted table
  std::uint64_t n = 0;
  std::vector<double> lg;  // lg[k] = lgamma(k + 1) = log(k!)
  double log_const = 0;    // sum_i log R_i! + sum_j log C_j! - log N!

  explicit MarginModel(const ContingencyTable& t) {
    const auto rm = t.row_margins();
    const auto cm = t.col_margins();
    std::vector<std::size_t> rows, cols;
    for (std::size_t r = 0; r < t.rows(); ++r)
      if (rm[r] > 0) rows.push_back(r);
    for (std::size_t c = 0; c < t.cols(); ++c)
      if (cm[c] > 0) cols.push_back(c);
    for (std::size_t r : rows) row_sums.push_back(rm[r]);
    for (std::size_t c : cols) col_sums.push_back(cm[c]);
    for (std::size_t r : rows)
      for (std::size_t c : cols) observed.push_back(t.cells[r][c]);
    n = std::accumulate(row_sums.begin(), row_sums.end(), std::uint64_t{0});

    lg.resize(n + 2);
    lg[0] = 0.0;
    for (std::size_t k = 1; k < lg.size(); ++k) lg[k] = lg[k - 1] + std::log(static_cast<double>(k));
    for (std::uint64_t r : row_sums) log_const += lg[r];
    for (std::uint64_t c : col_sums) log_const += lg[c];
    if (n > 0) log_const -= lg[n];
  }

  bool degenerate() const { return row_sums.size() < 2 || col_sums.size() < 2; }

  double log_prob(std::span<const std::uint64_t> cells) const {
    double s = log_const;
    for (std::uint64_t v : cells) s -= lg[v];
    return s;
  }
};

}  // namespace

std::uint64_t TurnHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<std::uint64_t> ContingencyTable::row_margins() const {
  std::vector<std::uint64_t> m(rows(), 0);
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::uint64_t v : cells[r]) m[r] += v;
  return m;
}

std::vector<std::uint64_t> ContingencyTable::col_margins() const {
  std::vector<std::uint64_t> m(cols(), 0);
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t c = 0; c < cols(); ++c) m[c] += cells[r][c];
  return m;
}

std::uint64_t ContingencyTable::total() const {
  std::uint64_t t = 0;
  for (const auto& row : cells) t += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
  return t;
}

double normalized_turn(std::size_t current, std::size_t total) {
  if (total == 0 || current == 0 || current > total)
    throw std::invalid_argument("normalized_turn: need 1 <= current <= total");
  return static_cast<double>(current) / static_cast<double>(total);
}

TurnHistogram mistake_turn_histogram(std::span<const corpus::GameRecord> games, std::size_t n_bins) {
  if (n_bins == 0) throw std::invalid_argument("mistake_turn_histogram: n_bins must be positive");
  if (!has_any_label(games))
    throw std::invalid_argument("mistake_turn_histogram: corpus carries no mistake labels");
  TurnHistogram h;
  h.n_bins = n_bins;
  h.counts.assign(n_bins, 0);
  for (const auto& g : games) {
    for (std::size_t i = 0; i < g.qas.size(); ++i) {
      if (!is_mistake(g.qas[i])) continue;
      double t = normalized_turn(i + 1, g.total_turns());
      // Right-closed bins: t in (b/n, (b+1)/n] lands in bin b.
      auto bin = static_cast<std::size_t>(std::ceil(t * static_cast<double>(n_bins))) - 1;
      h.counts[std::min(bin, n_bins - 1)] += 1;
    }
  }
  return h;
}

double last_turn_fraction(std::span<const corpus::GameRecord> games) {
  std::uint64_t mistakes = 0, last = 0;
  for (const auto& g : games) {
    for (std::size_t i = 0; i < g.qas.size(); ++i) {
      if (!is_mistake(g.qas[i])) continue;
      ++mistakes;
      if (i + 1 == g.total_turns()) ++last;
    }
  }
  if (mistakes == 0) throw std::invalid_argument("last_turn_fraction: no labeled mistakes");
  return static_cast<double>(last) / static_cast<double>(mistakes);
}

MistakeRateReport mistake_rate_by_type(std::span<const corpus::GameRecord> games,
                                       const qtype::KeywordTable& table) {
  MistakeRateReport report;
  for (qtype::QuestionType t : qtype::all_types()) report[t] = TypeRate{};
  for (const auto& g : games) {
    for (const auto& qa : g.qas) {
      TypeRate& tr = report[qtype::classify_question(qa.question, table)];
      tr.total += 1;
      if (is_mistake(qa)) tr.mistakes += 1;
    }
  }
  for (auto& [t, tr] : report) {
    if (tr.total > 0) tr.rate = static_cast<double>(tr.mistakes) / static_cast<double>(tr.total);
  }
  return report;
}

ContingencyTable build_contingency(std::span<const corpus::GameRecord> games,
                                   const qtype::KeywordTable& table) {
  ContingencyTable t;
  const auto types = qtype::all_types();
  t.cells.assign(2, std::vector<std::uint64_t>(types.size(), 0));
  std::map<qtype::QuestionType, std::size_t> col;
  for (std::size_t c = 0; c < types.size(); ++c) {
    t.col_labels.emplace_back(qtype::to_string(types[c]));
    col[types[c]] = c;
  }
  for (const auto& g : games) {
    for (const auto& qa : g.qas) {
      std::size_t c = col[qtype::classify_question(qa.question, table)];
      t.cells[is_mistake(qa) ? 0 : 1][c] += 1;
    }
  }
  return t;
}

double fisher_exact(const ContingencyTable& table, const FisherOptions& opts) {
  MarginModel m(table);
  if (m.degenerate()) return 1.0;

  const std::size_t rows = m.row_sums.size();
  const std::size_t cols = m.col_sums.size();

  // Upper bound on the number of margin-consistent tables: free cells are the
  // first rows-1 rows, each entry capped by its column margin.
  double bound = 1.0;
  for (std::size_t r = 0; r + 1 < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      bound *= static_cast<double>(std::min(m.row_sums[r], m.col_sums[c]) + 1);
      if (bound > static_cast<double>(opts.enum_cap))
        throw EnumerationCapExceeded(
            "fisher_exact: margin-consistent table space exceeds the enumeration cap; use fisher_mc");
    }
  }

  const double log_obs = m.log_prob(m.observed);
  const double tie_band = std::log1p(kTieRelTol);
  double p = 0.0;
  std::uint64_t visited = 0;

  std::vector<std::uint64_t> cells(rows * cols, 0);
  std::vector<std::uint64_t> col_rem = m.col_sums;

  // Fill rows 0..rows-2 cell by cell; the last row is forced by the column
  // remainders, so each complete assignment is one margin-consistent table.
  auto recurse = [&](auto&& self, std::size_t r, std::size_t c, std::uint64_t row_rem) -> void {
    if (r + 1 == rows) {
      for (std::size_t j = 0; j < cols; ++j) cells[r * cols + j] = col_rem[j];
      if (++visited > opts.enum_cap)
        throw EnumerationCapExceeded("fisher_exact: enumeration cap exceeded; use fisher_mc");
      double lp = m.log_prob(cells);
      if (lp <= log_obs + tie_band) p += std::exp(lp);
      return;
    }
    if (c + 1 == cols) {
      if (row_rem > col_rem[c]) return;
      cells[r * cols + c] = row_rem;
      col_rem[c] -= row_rem;
      self(self, r + 1, 0, r + 2 == rows ? 0 : m.row_sums[r + 1]);
      col_rem[c] += row_rem;
      return;
    }
    // Feasibility window: leave enough for the remaining columns of this row.
    std::uint64_t later_cap = 0;
    for (std::size_t j = c + 1; j < cols; ++j) later_cap += col_rem[j];
    std::uint64_t lo = row_rem > later_cap ? row_rem - later_cap : 0;
    std::uint64_t hi = std::min(row_rem, col_rem[c]);
    for (std::uint64_t v = lo; v <= hi; ++v) {
      cells[r * cols + c] = v;
      col_rem[c] -= v;
      self(self, r, c + 1, row_rem - v);
      col_rem[c] += v;
    }
  };
  recurse(recurse, 0, 0, m.row_sums[0]);
  return std::min(p, 1.0);
}

McResult fisher_mc(const ContingencyTable& table, std::uint64_t replicates, std::uint64_t seed) {
  if (replicates == 0) throw std::invalid_argument("fisher_mc: replicates must be >= 1");
  MarginModel m(table);
  if (m.degenerate()) return {1.0, true};

  const std::size_t rows = m.row_sums.size();
  const std::size_t cols = m.col_sums.size();
  const double log_obs = m.log_prob(m.observed);
  const double tie_band = std::log1p(kTieRelTol);

  // Row-label pool; a shuffle followed by cutting into column-sized blocks
  // draws exactly from the margin-conditional null.
  std::vector<std::uint8_t> labels;
  labels.reserve(m.n);
  for (std::size_t r = 0; r < rows; ++r)
    labels.insert(labels.end(), m.row_sums[r], static_cast<std::uint8_t>(r));

  std::vector<std::uint64_t> cells(rows * cols);
  std::uint64_t as_extreme = 0;
  for (std::uint64_t b = 0; b < replicates; ++b) {
    util::Rng rng(util::hash_mix(seed, b));
    rng.shuffle(labels);
    std::fill(cells.begin(), cells.end(), 0);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::uint64_t i = 0; i < m.col_sums[c]; ++i) cells[labels[pos++] * cols + c] += 1;
    }
    if (m.log_prob(cells) <= log_obs + tie_band) ++as_extreme;
  }
  double p = static_cast<double>(1 + as_extreme) / static_cast<double>(replicates + 1);
  return {p, false};
}

}  // namespace mistake::stats
