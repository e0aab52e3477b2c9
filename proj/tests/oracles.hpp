// Test-only oracles, independent of the library implementation paths they
// check.
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mistake/stats.hpp"
#include "mistake/util.hpp"

namespace mistake::testing {

inline std::uint64_t choose_u64(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Exact-rational Fisher p for two-row tables. Every margin-consistent table
/// has probability numerator(x) / choose(N, R0) with integer numerator
/// prod_j choose(C_j, x_j), so the "no more probable than observed" set is
/// decided by exact integer comparison and the division happens once.
inline double fisher_oracle_2xc(const stats::ContingencyTable& t) {
  std::vector<std::uint64_t> cols, row0;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    std::uint64_t cm = t.cells[0][c] + t.cells[1][c];
    if (cm == 0) continue;
    cols.push_back(cm);
    row0.push_back(t.cells[0][c]);
  }
  const std::uint64_t r0 = std::accumulate(row0.begin(), row0.end(), std::uint64_t{0});
  const std::uint64_t n = std::accumulate(cols.begin(), cols.end(), std::uint64_t{0});
  if (cols.size() < 2 || r0 == 0 || r0 == n) return 1.0;

  std::uint64_t num_obs = 1;
  for (std::size_t j = 0; j < cols.size(); ++j) num_obs *= choose_u64(cols[j], row0[j]);

  std::uint64_t qualifying = 0;
  auto walk = [&](auto&& self, std::size_t j, std::uint64_t rem, std::uint64_t num) -> void {
    if (j + 1 == cols.size()) {
      if (rem > cols[j]) return;
      std::uint64_t total = num * choose_u64(cols[j], rem);
      if (total <= num_obs) qualifying += total;
      return;
    }
    for (std::uint64_t v = 0; v <= std::min(rem, cols[j]); ++v)
      self(self, j + 1, rem - v, num * choose_u64(cols[j], v));
  };
  walk(walk, 0, r0, 1);
  return static_cast<double>(qualifying) / static_cast<double>(choose_u64(n, r0));
}

inline stats::ContingencyTable table_2xc(std::vector<std::vector<std::uint64_t>> cells) {
  stats::ContingencyTable t;
  t.cells = std::move(cells);
  for (std::size_t c = 0; c < t.cols(); ++c) t.col_labels.push_back("c" + std::to_string(c));
  return t;
}

/// Random two-row table whose row and column margins all lie in [1, max_margin].
inline stats::ContingencyTable random_table(util::Rng& rng, std::size_t cols,
                                            std::uint64_t max_margin) {
  for (;;) {
    stats::ContingencyTable t =
        table_2xc({std::vector<std::uint64_t>(cols, 0), std::vector<std::uint64_t>(cols, 0)});
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < cols; ++c) t.cells[r][c] = rng.below(max_margin / 2 + 1);
    auto rm = t.row_margins();
    auto cm = t.col_margins();
    bool ok = rm[0] > 0 && rm[1] > 0 && rm[0] <= max_margin && rm[1] <= max_margin;
    for (std::size_t c = 0; c < cols; ++c) ok = ok && cm[c] > 0 && cm[c] <= max_margin;
    if (ok) return t;
  }
}

}  // namespace mistake::testing
