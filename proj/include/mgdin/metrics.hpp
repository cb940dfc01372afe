#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mgdin/common.hpp"

namespace mgdin {

// Probability that a random (positive, negative) pair is ordered correctly,
// ties counted half. Rank-sum implementation in O(N log N); the correct/tie
// pair counts are accumulated in exact integer arithmetic, so the result is
// identical to brute-force pair counting. Throws UndefinedMetricError when
// only one class is present.
double auc(std::span<const double> scores, std::span<const double> labels);

// Impression-weighted mean of per-user AUC over users with both classes;
// weights are user impression counts renormalized over scored users. Throws
// UndefinedMetricError when no user has both classes.
double gauc(std::span<const double> scores, std::span<const double> labels,
            std::span<const std::int64_t> user_ids);

// The aggregation step of gauc: sum(w * auc) / sum(w) over (auc, weight).
double weighted_auc_mean(std::span<const std::pair<double, double>> auc_and_weight);

// Users with both classes present (the GAUC denominator population).
std::int64_t gauc_scored_users(std::span<const double> labels,
                               std::span<const std::int64_t> user_ids);

// Mean negative log-likelihood; scores clamped to [1e-12, 1 - 1e-12].
double logloss(std::span<const double> scores, std::span<const double> labels);

}  // namespace mgdin
