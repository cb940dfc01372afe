#include "mgdin/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mgdin/metrics.hpp"

namespace mgdin {

using i64 = std::int64_t;
using clock_type = std::chrono::steady_clock;

Optimizer::Optimizer(const OptimizerConfig& config, std::vector<NamedParam> params)
    : config_(config) {
  for (auto& p : params)
    if (p.trainable) params_.push_back(p);
  if (config_.kind == OptimizerKind::Adam) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
  }
}

void Optimizer::step() {
  ++step_count_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      auto vals = p.tensor.values_mut();
      const auto g = p.tensor.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= config_.lr * g[i];
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    const auto g = p.tensor.grad_or_zeros();
    auto vals = p.tensor.values_mut();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      vals[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<double> score_dataset(const Model& model, const Dataset& data,
                                  i64 batch_size) {
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(data.size()));
  for (i64 begin = 0; begin < data.size(); begin += batch_size) {
    const i64 end = std::min(data.size(), begin + batch_size);
    const auto batch = data.batch_range(begin, end);
    const auto preds = predict(model, batch);
    scores.insert(scores.end(), preds.begin(), preds.end());
  }
  return scores;
}

EvalReport evaluate(const Model& model, const Dataset& data, i64 batch_size) {
  const auto t0 = clock_type::now();
  const auto scores = score_dataset(model, data, batch_size);
  EvalReport report;
  report.n_examples = data.size();
  report.auc = auc(scores, data.labels);
  report.logloss = logloss(scores, data.labels);
  if (data.has_user_ids()) {
    try {
      report.gauc = gauc(scores, data.labels, data.user_ids);
      report.n_users_scored = gauc_scored_users(data.labels, data.user_ids);
    } catch (const UndefinedMetricError&) {
      report.gauc = std::numeric_limits<double>::quiet_NaN();
      report.n_users_scored = 0;
    }
  } else {
    report.gauc = std::numeric_limits<double>::quiet_NaN();
    report.n_users_scored = 0;
  }
  report.wall_time_sec =
      std::chrono::duration<double>(clock_type::now() - t0).count();
  return report;
}

TrainResult train(Model& model, const Dataset& train_data, const Dataset& eval_data,
                  const TrainConfig& config) {
  if (train_data.size() == 0) throw DataError("train: empty training dataset");
  if (config.batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");

  Optimizer optimizer(config.optimizer, flat_params(model));
  Rng shuffle_rng(config.seed);
  std::vector<i64> order(static_cast<std::size_t>(train_data.size()));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (i64 epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    i64 n_batches = 0;
    for (i64 begin = 0; begin < train_data.size(); begin += config.batch_size) {
      const i64 end = std::min(train_data.size(), begin + config.batch_size);
      const auto batch = train_data.batch_rows(
          std::span<const i64>(order.data() + begin, static_cast<std::size_t>(end - begin)));

      Tape tape;
      double loss_value;
      Tensor batch_loss;
      try {
        const Tensor y_hat = forward(&tape, model, batch);
        batch_loss = loss(&tape, y_hat, labels_tensor(batch), model.config.prediction_clamp);
        loss_value = batch_loss.scalar_value();
      } catch (const NumericError& e) {
        throw NumericError("train: numeric failure at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(n_batches) + ": " + e.what());
      }
      if (!std::isfinite(loss_value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(n_batches));
      optimizer.zero_grad();
      tape.backward(batch_loss);
      optimizer.step();

      loss_sum += loss_value;
      ++n_batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_train_loss = loss_sum / static_cast<double>(std::max<i64>(1, n_batches));
    record.eval = evaluate(model, eval_data, config.batch_size);
    result.trace.push_back(record);
  }
  result.final_eval = result.trace.empty() ? evaluate(model, eval_data, config.batch_size)
                                           : result.trace.back().eval;
  return result;
}

GradCheckResult gradcheck_model(const Model& model, const FeatureBatch& batch,
                                double fd_step) {
  auto params = flat_params(model);

  // Analytic pass.
  for (auto& np : params) np.tensor.clear_grad();
  {
    Tape tape;
    const Tensor y = forward(&tape, model, batch);
    const Tensor l = loss(&tape, y, labels_tensor(batch), model.config.prediction_clamp);
    tape.backward(l);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& np : params) analytic.push_back(np.tensor.grad_or_zeros());

  const auto loss_at = [&]() {
    const Tensor y = forward(nullptr, model, batch);
    const Tensor l = loss(nullptr, y, labels_tensor(batch), model.config.prediction_clamp);
    return l.scalar_value();
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& np = params[pi];
    GradCheckGroup group;
    group.name = np.name;
    group.count = np.tensor.numel();
    group.trainable = np.trainable;
    if (!np.trainable) {
      for (double g : analytic[pi])
        if (g != 0.0) group.frozen_grad_zero = false;
      result.frozen_exact_zero = result.frozen_exact_zero && group.frozen_grad_zero;
      result.groups.push_back(group);
      continue;
    }
    auto vals = params[pi].tensor.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + fd_step;
      const double up = loss_at();
      vals[i] = saved - fd_step;
      const double down = loss_at();
      vals[i] = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      group.max_rel_err = std::max(group.max_rel_err, rel);
    }
    result.max_rel_err = std::max(result.max_rel_err, group.max_rel_err);
    result.groups.push_back(group);
  }
  return result;
}

}  // namespace mgdin
