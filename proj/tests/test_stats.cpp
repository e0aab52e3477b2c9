#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <numeric>

#include "mistake/fixtures.hpp"
#include "mistake/stats.hpp"
#include "mistake/util.hpp"
#include "oracles.hpp"

using namespace mistake;
using stats::ContingencyTable;
using testing::fisher_oracle_2xc;
using testing::random_table;
using testing::table_2xc;

TEST_CASE("normalized_turn is current over total on (0, 1]") {
  CHECK(stats::normalized_turn(1, 1) == 1.0);
  CHECK(stats::normalized_turn(2, 4) == 0.5);
  CHECK(stats::normalized_turn(3, 5) == doctest::Approx(0.6));
  CHECK_THROWS(stats::normalized_turn(3, 2));
  CHECK_THROWS(stats::normalized_turn(0, 2));
  CHECK_THROWS(stats::normalized_turn(1, 0));
}

namespace {
corpus::GameRecord labeled_game(const std::string& id, std::vector<std::optional<bool>> labels) {
  corpus::GameRecord g;
  g.game_id = id;
  g.image = {"img-" + id, 100, 100, std::nullopt};
  g.objects = {{"o1", "cat", {0, 0, 50, 50}}};
  g.target_object_id = "o1";
  g.status = corpus::GameStatus::Failure;
  for (auto l : labels) g.qas.push_back({"Is it red?", corpus::Answer::Yes, l});
  return g;
}
}  // namespace

TEST_CASE("mistake_turn_histogram fills right-closed bins") {
  std::vector<corpus::GameRecord> games = {labeled_game("a", {false, true})};
  stats::TurnHistogram h = stats::mistake_turn_histogram(games, 2);
  CHECK(h.counts == std::vector<std::uint64_t>{0, 1});

  SUBCASE("no mistakes give an all-zero histogram") {
    std::vector<corpus::GameRecord> clean = {labeled_game("b", {false, false, false})};
    stats::TurnHistogram z = stats::mistake_turn_histogram(clean, 5);
    CHECK(z.total() == 0);
  }
  SUBCASE("an unlabeled corpus is an error") {
    std::vector<corpus::GameRecord> unlabeled = {labeled_game("c", {std::nullopt})};
    CHECK_THROWS(stats::mistake_turn_histogram(unlabeled, 4));
  }
  SUBCASE("mass equals the mistake count for any bin count") {
    auto fixture = fixtures::turn_analysis_fixture();
    for (std::size_t bins : {5, 10, 20, 7}) {
      CHECK(stats::mistake_turn_histogram(fixture, bins).total() == 431);
    }
  }
}

TEST_CASE("last_turn_fraction matches the 231-of-431 fixture") {
  auto fixture = fixtures::turn_analysis_fixture();
  CHECK(stats::last_turn_fraction(fixture) == 231.0 / 431.0);

  std::vector<corpus::GameRecord> all_last = {labeled_game("a", {false, true}),
                                              labeled_game("b", {true})};
  CHECK(stats::last_turn_fraction(all_last) == 1.0);
  std::vector<corpus::GameRecord> all_mid = {labeled_game("c", {true, false})};
  CHECK(stats::last_turn_fraction(all_mid) == 0.0);
  std::vector<corpus::GameRecord> none = {labeled_game("d", {false})};
  CHECK_THROWS(stats::last_turn_fraction(none));
}

TEST_CASE("mistake_rate_by_type reports per-type rates that need not sum to 1") {
  const qtype::KeywordTable table = qtype::KeywordTable::defaults();
  corpus::GameRecord g = labeled_game("a", {});
  for (int i = 0; i < 10; ++i) g.qas.push_back({"Is it red?", corpus::Answer::Yes, i < 4});
  g.qas.push_back({"Is it on the left?", corpus::Answer::Yes, true});
  g.qas.push_back({"Is it small?", corpus::Answer::No, true});
  stats::MistakeRateReport rep = stats::mistake_rate_by_type({&g, 1}, table);

  CHECK(rep[qtype::QuestionType::Color].total == 10);
  CHECK(rep[qtype::QuestionType::Color].mistakes == 4);
  CHECK(rep[qtype::QuestionType::Color].rate == doctest::Approx(0.4));
  CHECK(rep[qtype::QuestionType::Shape].total == 0);
  CHECK_FALSE(rep[qtype::QuestionType::Shape].rate.has_value());
  // Two types with a single, mistaken answer each: both rates 1.0.
  CHECK(rep[qtype::QuestionType::Spatial].rate == doctest::Approx(1.0));
  CHECK(rep[qtype::QuestionType::Size].rate == doctest::Approx(1.0));

  SUBCASE("duplicating every game leaves rates unchanged") {
    std::vector<corpus::GameRecord> doubled = {g, g};
    stats::MistakeRateReport rep2 = stats::mistake_rate_by_type(doubled, table);
    for (auto type : qtype::all_types()) {
      CHECK(rep2[type].rate.has_value() == rep[type].rate.has_value());
      if (rep[type].rate) CHECK(*rep2[type].rate == doctest::Approx(*rep[type].rate));
    }
  }
}

TEST_CASE("build_contingency counts incorrect and correct per type") {
  const qtype::KeywordTable table = qtype::KeywordTable::defaults();
  corpus::GameRecord g = labeled_game("a", {});
  g.qas.push_back({"Is it red?", corpus::Answer::Yes, true});
  g.qas.push_back({"Is it blue?", corpus::Answer::No, false});
  g.qas.push_back({"Is it on the left?", corpus::Answer::Yes, false});
  ContingencyTable t = stats::build_contingency({&g, 1}, table);
  REQUIRE(t.cols() == 9);
  const std::size_t color = 2, spatial = 0;  // all_types() order
  CHECK(t.cells[0][color] == 1);
  CHECK(t.cells[1][color] == 1);
  CHECK(t.cells[0][spatial] == 0);
  CHECK(t.cells[1][spatial] == 1);

  ContingencyTable empty = stats::build_contingency({}, table);
  CHECK(empty.total() == 0);
}

TEST_CASE("fisher_exact handles degenerate and tiny tables") {
  // One margin zero: the margins admit a single table.
  CHECK(stats::fisher_exact(table_2xc({{0, 0}, {3, 4}})) == 1.0);
  CHECK(stats::fisher_exact(table_2xc({{2, 0}, {3, 0}})) == 1.0);

  ContingencyTable t = table_2xc({{3, 1}, {1, 3}});
  double p = stats::fisher_exact(t);
  CHECK(p == doctest::Approx(fisher_oracle_2xc(t)).epsilon(1e-12));
  // Classic 2x2 with margins (4,4)/(4,4): two-sided p = 0.485714...
  CHECK(p == doctest::Approx(34.0 / 70.0).epsilon(1e-12));
}

TEST_CASE("fisher_exact matches the exhaustive oracle on random 2x2 and 2x3 tables") {
  util::Rng rng(2024);
  for (int trial = 0; trial < 120; ++trial) {
    ContingencyTable t = random_table(rng, trial % 2 ? 2 : 3, 12);
    double impl = stats::fisher_exact(t);
    double oracle = fisher_oracle_2xc(t);
    CAPTURE(trial);
    CHECK(std::abs(impl - oracle) <= 1e-12);
    CHECK(impl > 0.0);
    CHECK(impl <= 1.0);
  }
}

TEST_CASE("fisher_exact agrees with reference two-sided values") {
  // Expected p-values computed externally with an independent statistics
  // package (two-sided, probability ordering), frozen here.
  const struct {
    std::uint64_t a, b, c, d;
    double p;
  } cases[] = {
      {6, 3, 1, 0, 1.0},
      {4, 3, 3, 2, 1.0},
      {2, 1, 4, 3, 1.0},
      {0, 6, 3, 1, 0.03333333333333334},
      {1, 4, 6, 5, 0.3076923076923077},
      {3, 0, 0, 1, 0.25},
      {4, 1, 1, 2, 0.4642857142857142},
      {0, 1, 5, 1, 0.2857142857142857},
      {6, 5, 4, 5, 1.0},
      {5, 1, 3, 0, 1.0},
      {2, 2, 0, 2, 0.4666666666666667},
      {1, 4, 2, 5, 1.0},
  };
  for (const auto& k : cases) {
    CAPTURE(k.a);
    CAPTURE(k.b);
    CAPTURE(k.c);
    CAPTURE(k.d);
    double p = stats::fisher_exact(table_2xc({{k.a, k.b}, {k.c, k.d}}));
    CHECK(p == doctest::Approx(k.p).epsilon(1e-10));
  }
}

TEST_CASE("fisher_exact is invariant under column permutation") {
  util::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ContingencyTable t = random_table(rng, 3, 10);
    ContingencyTable perm = table_2xc({{t.cells[0][2], t.cells[0][0], t.cells[0][1]},
                                       {t.cells[1][2], t.cells[1][0], t.cells[1][1]}});
    CHECK(stats::fisher_exact(t) == doctest::Approx(stats::fisher_exact(perm)).epsilon(1e-12));
  }
}

TEST_CASE("fisher_exact refuses tables beyond the enumeration cap") {
  ContingencyTable big = table_2xc({{400, 380, 390}, {390, 400, 410}});
  CHECK_THROWS_AS(stats::fisher_exact(big, {1000}), stats::EnumerationCapExceeded);
}

TEST_CASE("fisher_mc approaches the exact value and is seed-reproducible") {
  util::Rng rng(99);
  for (int trial = 0; trial < 6; ++trial) {
    ContingencyTable t = random_table(rng, 3, 10);
    double exact = stats::fisher_exact(t);
    stats::McResult mc = stats::fisher_mc(t, 20000, 1234 + trial);
    CHECK_FALSE(mc.degenerate);
    CHECK(std::abs(mc.p - exact) < 0.02);
    CHECK(stats::fisher_mc(t, 20000, 1234 + trial).p == mc.p);  // bit-reproducible
  }
}

TEST_CASE("fisher_mc add-one estimator hits 1/2001 on a maximally extreme table") {
  ContingencyTable t = table_2xc({{20, 0}, {0, 20}});
  stats::McResult mc = stats::fisher_mc(t, 2000, 7);
  CHECK(mc.p == 1.0 / 2001.0);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.7f", mc.p);
  CHECK(std::string(buf) == "0.0004998");

  SUBCASE("B = 1 with an equally extreme draw gives (1+1)/2") {
    // Unit margins: both admissible tables have probability 1/2, so any
    // draw ties the observed one.
    ContingencyTable forced = table_2xc({{1, 0}, {0, 1}});
    stats::McResult r = stats::fisher_mc(forced, 1, 3);
    CHECK_FALSE(r.degenerate);
    CHECK(r.p == 1.0);
  }
  SUBCASE("degenerate margins warn and return 1.0") {
    ContingencyTable degen = table_2xc({{3, 4}, {0, 0}});
    stats::McResult r = stats::fisher_mc(degen, 100, 3);
    CHECK(r.degenerate);
    CHECK(r.p == 1.0);
  }
}
