#include <doctest.h>

#include <cmath>

#include "mmpred/error.hpp"
#include "mmpred/stats.hpp"

using namespace mmpred::eval;

TEST_CASE("rank matrix handles ties with average ranks; rows sum to k(k+1)/2") {
  RankMatrix rm = RankMatrix::from_scores({{0.5, 0.5, 0.1}, {0.9, 0.2, 0.2}, {0.3, 0.3, 0.3}});
  CHECK(rm.ranks[0][0] == doctest::Approx(1.5));
  CHECK(rm.ranks[0][1] == doctest::Approx(1.5));
  CHECK(rm.ranks[0][2] == doctest::Approx(3.0));
  CHECK(rm.ranks[2][0] == doctest::Approx(2.0));
  for (const auto& row : rm.ranks) {
    double s = 0.0;
    for (double r : row) s += r;
    CHECK(s == doctest::Approx(6.0).epsilon(1e-9));
  }
}

TEST_CASE("chi-square survival matches closed forms") {
  // df=2: SF(x) = exp(-x/2)
  CHECK(chi2_survival(8.0, 2) == doctest::Approx(std::exp(-4.0)).epsilon(1e-10));
  CHECK(chi2_survival(1.0, 2) == doctest::Approx(std::exp(-0.5)).epsilon(1e-10));
  // df=1: SF(x) = 2*(1 - Phi(sqrt(x)))
  CHECK(chi2_survival(3.84, 1) == doctest::Approx(2.0 * (1.0 - normal_cdf(std::sqrt(3.84))))
                                      .epsilon(1e-9));
  CHECK(chi2_survival(0.0, 3) == doctest::Approx(1.0));
}

TEST_CASE("friedman: identical scores give zero statistic, p=1") {
  RankMatrix rm = RankMatrix::from_scores({{0.5, 0.5, 0.5}, {0.2, 0.2, 0.2}});
  FriedmanResult r = friedman_test(rm);
  CHECK(r.chi2 == doctest::Approx(0.0));
  CHECK(r.p_value == doctest::Approx(1.0));
}

TEST_CASE("friedman: hand-derived N=4 k=3 dominance example") {
  // A always best, C always worst: every row ranks (1,2,3).
  RankMatrix rm = RankMatrix::from_scores(
      {{0.9, 0.5, 0.1}, {0.8, 0.6, 0.2}, {0.7, 0.5, 0.3}, {0.9, 0.4, 0.2}});
  FriedmanResult r = friedman_test(rm);
  CHECK(r.chi2 == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(r.df == 2);
  CHECK(r.p_value == doctest::Approx(0.0183156).epsilon(1e-4));
}

TEST_CASE("friedman: one permuted row weakens the statistic") {
  // Three (1,2,3) rows plus one (2,1,3) row: chi2 = 6.5 by hand.
  RankMatrix rm = RankMatrix::from_scores(
      {{0.9, 0.5, 0.1}, {0.8, 0.6, 0.2}, {0.7, 0.5, 0.3}, {0.4, 0.9, 0.2}});
  FriedmanResult r = friedman_test(rm);
  CHECK(r.chi2 == doctest::Approx(6.5).epsilon(1e-12));
  CHECK(r.chi2 < 8.0);
}

TEST_CASE("friedman preconditions") {
  RankMatrix one_block = RankMatrix::from_scores({{0.1, 0.2, 0.3}});
  CHECK_THROWS_AS(friedman_test(one_block), mmpred::config_error);
  RankMatrix two_cls = RankMatrix::from_scores({{0.1, 0.2}, {0.3, 0.1}});
  CHECK_THROWS_AS(friedman_test(two_cls), mmpred::config_error);
}

TEST_CASE("studentized range survival: closed form at k=2") {
  // Range of two std normals: SF(q) = 2*(1 - Phi(q/sqrt(2))).
  for (double q : {0.5, 1.0, 2.0, 2.772, 3.5}) {
    const double expected = 2.0 * (1.0 - normal_cdf(q / std::sqrt(2.0)));
    CHECK(studentized_range_survival(q, 2) == doctest::Approx(expected).epsilon(1e-7));
  }
}

TEST_CASE("embedded nemenyi table agrees with direct quadrature") {
  // Published 3-decimal values (Demsar 2006, Table 5) as anchors.
  CHECK(nemenyi_q(2, 0.05) == doctest::Approx(1.960).epsilon(1e-3));
  CHECK(nemenyi_q(3, 0.05) == doctest::Approx(2.343).epsilon(1e-3));
  CHECK(nemenyi_q(5, 0.05) == doctest::Approx(2.728).epsilon(1e-3));
  CHECK(nemenyi_q(10, 0.05) == doctest::Approx(3.164).epsilon(1e-3));
  CHECK(nemenyi_q(2, 0.10) == doctest::Approx(1.645).epsilon(1e-3));
  CHECK(nemenyi_q(7, 0.10) == doctest::Approx(2.693).epsilon(1e-3));
  CHECK(nemenyi_q(8, 0.10) == doctest::Approx(2.780).epsilon(1e-3));
  // Every entry must invert the range distribution: SF(q*sqrt(2), k) = alpha.
  for (int k = 2; k <= 20; ++k) {
    for (double alpha : {0.05, 0.10}) {
      const double q = nemenyi_q(k, alpha);
      CHECK(studentized_range_survival(q * std::sqrt(2.0), k) ==
            doctest::Approx(alpha).epsilon(2e-3));
    }
  }
}

TEST_CASE("critical difference formula") {
  // k=3, N=10: CD = q * sqrt(k(k+1)/(12N)) = q * sqrt(0.1)
  const double cd = critical_difference(3, 10, 0.05);
  CHECK(cd == doctest::Approx(nemenyi_q(3, 0.05) * std::sqrt(0.1)).epsilon(1e-12));
}

TEST_CASE("nemenyi posthoc: identical mean ranks give p=1") {
  RankMatrix rm = RankMatrix::from_scores(
      {{0.5, 0.5, 0.1}, {0.2, 0.2, 0.1}, {0.7, 0.7, 0.2}});
  auto p = nemenyi_posthoc(rm);
  CHECK(p[0][1] == doctest::Approx(1.0));
  CHECK(p[0][0] == doctest::Approx(1.0));
  // Symmetry.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(p[i][j] == doctest::Approx(p[j][i]));
}

TEST_CASE("nemenyi boundary: mean-rank gap exactly CD is significant") {
  // Construct mean ranks straddling CD: gap == CD => p <= alpha (the >=
  // convention), gap slightly below => p > alpha.
  const int k = 3, n = 10;
  const double cd = critical_difference(k, n, 0.05);
  const double se = std::sqrt(k * (k + 1) / (12.0 * n));
  const double p_at_cd = studentized_range_survival(cd / se * std::sqrt(2.0), k);
  CHECK(p_at_cd == doctest::Approx(0.05).epsilon(2e-3));
  const double p_below = studentized_range_survival((cd * 0.95) / se * std::sqrt(2.0), k);
  CHECK(p_below > 0.05);
}

TEST_CASE("cd diagram cliques") {
  SUBCASE("all ranks equal -> one clique of all") {
    auto d = cd_diagram_data({2.0, 2.0, 2.0, 2.0}, 0.5);
    REQUIRE(d.cliques.size() == 1);
    CHECK(d.cliques[0].first == 0);
    CHECK(d.cliques[0].second == 3);
  }
  SUBCASE("gap comparison") {
    auto d = cd_diagram_data({1.0, 1.1, 3.9}, 0.5);
    REQUIRE(d.cliques.size() == 2);
    CHECK(d.cliques[0] == std::make_pair(0, 1));
    CHECK(d.cliques[1] == std::make_pair(2, 2));
  }
  SUBCASE("overlapping maximal intervals") {
    auto d = cd_diagram_data({1.0, 2.0, 3.0}, 1.5);
    REQUIRE(d.cliques.size() == 2);
    CHECK(d.cliques[0] == std::make_pair(0, 1));
    CHECK(d.cliques[1] == std::make_pair(1, 2));
  }
  SUBCASE("unsorted input is ordered by mean rank") {
    auto d = cd_diagram_data({3.0, 1.0, 2.0}, 0.5);
    CHECK(d.order[0] == 1);
    CHECK(d.order[1] == 2);
    CHECK(d.order[2] == 0);
  }
}
