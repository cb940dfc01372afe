#include "mgdin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mgdin {

using i64 = std::int64_t;
using u64 = std::uint64_t;

namespace {

void check_binary(std::span<const double> labels) {
  for (double y : labels)
    if (y != 0.0 && y != 1.0)
      throw DataError("metrics: labels must be exactly 0 or 1, got " + std::to_string(y));
}

// Twice the pair-counting numerator (2 per correctly ordered pair, 1 per
// tie) as an exact integer; AUC = num2 / (2 * P * N).
u64 auc_numerator2(std::span<const double> scores, std::span<const double> labels,
                   u64* positives, u64* negatives) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return scores[i] < scores[j];
  });

  u64 pos = 0, neg = 0, num2 = 0;
  u64 neg_below = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    u64 tie_pos = 0, tie_neg = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1.0)
        ++tie_pos;
      else
        ++tie_neg;
      ++j;
    }
    // Positives in this tie group beat every lower-scored negative and tie
    // with the group's negatives.
    num2 += tie_pos * (2 * neg_below + tie_neg);
    neg_below += tie_neg;
    pos += tie_pos;
    neg += tie_neg;
    i = j;
  }
  *positives = pos;
  *negatives = neg;
  return num2;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw DataError("auc: scores and labels differ in length");
  if (scores.empty()) throw UndefinedMetricError("auc: empty input");
  check_binary(labels);
  u64 pos = 0, neg = 0;
  const u64 num2 = auc_numerator2(scores, labels, &pos, &neg);
  if (pos == 0 || neg == 0)
    throw UndefinedMetricError("auc: needs at least one positive and one negative label");
  return static_cast<double>(num2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double weighted_auc_mean(std::span<const std::pair<double, double>> auc_and_weight) {
  if (auc_and_weight.empty())
    throw UndefinedMetricError("weighted_auc_mean: no scored users");
  double num = 0.0, den = 0.0;
  for (const auto& [a, w] : auc_and_weight) {
    num += a * w;
    den += w;
  }
  return num / den;
}

namespace {

struct UserSlice {
  std::vector<double> scores;
  std::vector<double> labels;
};

std::map<i64, UserSlice> group_by_user(std::span<const double> scores,
                                       std::span<const double> labels,
                                       std::span<const i64> user_ids) {
  if (scores.size() != labels.size() || scores.size() != user_ids.size())
    throw DataError("gauc: scores, labels and user_ids differ in length");
  std::map<i64, UserSlice> users;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& u = users[user_ids[i]];
    u.scores.push_back(scores[i]);
    u.labels.push_back(labels[i]);
  }
  return users;
}

bool has_both_classes(const UserSlice& u) {
  bool any_pos = false, any_neg = false;
  for (double y : u.labels) (y == 1.0 ? any_pos : any_neg) = true;
  return any_pos && any_neg;
}

}  // namespace

double gauc(std::span<const double> scores, std::span<const double> labels,
            std::span<const i64> user_ids) {
  check_binary(labels);
  const auto users = group_by_user(scores, labels, user_ids);
  std::vector<std::pair<double, double>> per_user;
  for (const auto& [uid, slice] : users) {
    if (!has_both_classes(slice)) continue;
    per_user.emplace_back(auc(slice.scores, slice.labels),
                          static_cast<double>(slice.scores.size()));
  }
  if (per_user.empty())
    throw UndefinedMetricError("gauc: no user has both a positive and a negative");
  return weighted_auc_mean(per_user);
}

std::int64_t gauc_scored_users(std::span<const double> labels,
                               std::span<const i64> user_ids) {
  std::vector<double> dummy(labels.size(), 0.0);
  const auto users = group_by_user(dummy, labels, user_ids);
  i64 count = 0;
  for (const auto& [uid, slice] : users)
    if (has_both_classes(slice)) ++count;
  return count;
}

double logloss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw DataError("logloss: scores and labels differ in length");
  if (scores.empty()) throw UndefinedMetricError("logloss: empty input");
  check_binary(labels);
  constexpr double eps = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::min(std::max(scores[i], eps), 1.0 - eps);
    total += labels[i] == 1.0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace mgdin
