#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgdin/metrics.hpp"
#include "mgdin/model.hpp"
#include "support/testers.hpp"

using namespace mgdin;
using mgdin::testing::brute_force_auc;
using i64 = std::int64_t;

TEST_CASE("auc hand examples") {
  // pairs: (0.9 vs 0.8) correct, (0.3 vs 0.8) incorrect -> 0.5
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<double>{1, 0, 1}) == 0.5);
  // perfectly ordered
  CHECK(auc(std::vector<double>{0.1, 0.9, 0.2, 0.8}, std::vector<double>{0, 1, 0, 1}) == 1.0);
  // all ties
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{1, 0, 1}) == 0.5);
}

TEST_CASE("auc errors") {
  CHECK_THROWS_AS(auc(std::vector<double>{0.5, 0.6}, std::vector<double>{1, 1}),
                  UndefinedMetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{}, std::vector<double>{}), UndefinedMetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.5, 0.6}, std::vector<double>{1, 2}), DataError);
}

TEST_CASE("fast auc equals brute-force pair counting exactly on 200 random instances") {
  Rng rng(1);
  int done = 0;
  while (done < 200) {
    const std::size_t n = 2 + rng.next_below(49);
    std::vector<double> scores(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // coarse grid forces plenty of duplicate scores
      scores[i] = static_cast<double>(rng.next_below(8)) / 8.0;
      labels[i] = rng.next_double() < 0.5 ? 0.0 : 1.0;
    }
    bool pos = false, neg = false;
    for (double y : labels) (y == 1.0 ? pos : neg) = true;
    if (!pos || !neg) continue;
    const double fast = auc(scores, labels);
    const double brute = brute_force_auc(scores, labels);
    CHECK(fast == brute);  // exact: both divide the same integer numerator
    ++done;
  }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
  Rng rng(2);
  std::vector<double> scores(40), labels(40);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = static_cast<double>(rng.next_below(10)) / 4.0 - 1.0;
    labels[i] = rng.next_double() < 0.4 ? 1.0 : 0.0;
  }
  const double base = auc(scores, labels);
  std::vector<double> affine(scores), expd(scores), cubed(scores);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    affine[i] = 3.0 * scores[i] + 7.0;
    expd[i] = std::exp(scores[i]);
    cubed[i] = scores[i] * scores[i] * scores[i];
  }
  CHECK(auc(affine, labels) == base);
  CHECK(auc(expd, labels) == base);
  CHECK(auc(cubed, labels) == base);
}

TEST_CASE("gauc degenerate and weighted cases") {
  std::vector<double> scores = {0.9, 0.2, 0.7, 0.4};
  std::vector<double> labels = {1, 0, 1, 0};
  std::vector<i64> one_user = {5, 5, 5, 5};
  // single user: gauc equals auc exactly
  CHECK(gauc(scores, labels, one_user) == auc(scores, labels));

  // two users, each perfectly ordered: gauc = 1 regardless of weights
  std::vector<i64> two_users = {1, 1, 2, 2};
  CHECK(gauc(scores, labels, two_users) == 1.0);

  // the weighting semantics: (3 * 1.0 + 1 * 0.0) / 4 = 0.75
  std::vector<std::pair<double, double>> per_user = {{1.0, 3.0}, {0.0, 1.0}};
  CHECK(weighted_auc_mean(per_user) == 0.75);

  // end-to-end weighted mean with scorable users: user 1 has 3 impressions
  // with AUC 1, user 2 has 2 impressions with AUC 0 -> (3*1 + 2*0)/5
  std::vector<double> s2 = {0.9, 0.8, 0.1, 0.2, 0.7};
  std::vector<double> y2 = {1, 1, 0, 1, 0};
  std::vector<i64> u2 = {1, 1, 1, 2, 2};
  CHECK(gauc(s2, y2, u2) == doctest::Approx(3.0 / 5.0).epsilon(1e-15));

  // single-class users are excluded from scoring but a fully single-class
  // population is an error
  std::vector<i64> single = {1, 2, 3, 4};
  CHECK_THROWS_AS(gauc(std::vector<double>{0.5, 0.6}, std::vector<double>{1, 1},
                       std::vector<i64>{1, 1}),
                  UndefinedMetricError);
  CHECK(gauc_scored_users(labels, two_users) == 2);
  CHECK(gauc_scored_users(std::vector<double>{1, 1, 0}, std::vector<i64>{1, 1, 2}) == 0);
}

TEST_CASE("logloss values and cross-module consistency") {
  std::vector<double> half = {0.5, 0.5, 0.5};
  std::vector<double> labels = {1, 0, 1};
  CHECK(std::abs(logloss(half, labels) - std::log(2.0)) < 1e-12);

  std::vector<double> exact = {1.0, 0.0, 1.0};
  CHECK(logloss(exact, labels) < 1e-10);

  // identical formula to the training loss
  Rng rng(3);
  std::vector<double> scores(64), ys(64);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = 0.05 + 0.9 * rng.next_double();
    ys[i] = rng.next_double() < 0.5 ? 0.0 : 1.0;
  }
  const double metric = logloss(scores, ys);
  const double train_loss =
      loss(nullptr, Tensor::from_values({64}, scores), Tensor::from_values({64}, ys), 1e-12)
          .scalar_value();
  CHECK(std::abs(metric - train_loss) < 1e-12);
}

TEST_CASE("gauc with every example under one user equals auc exactly") {
  Rng rng(4);
  std::vector<double> scores(100), labels(100);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.next_double();
    labels[i] = rng.next_double() < 0.3 ? 1.0 : 0.0;
  }
  std::vector<i64> users(100, 7);
  CHECK(gauc(scores, labels, users) == auc(scores, labels));
}
