#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgdin/features.hpp"
#include "mgdin/model.hpp"

namespace mgdin {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order optimizer over the model's trainable parameters. Moment
// buffers are shape-congruent with their parameters; updates are elementwise
// and deterministic.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::vector<NamedParam> params);

  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<NamedParam> params_;  // trainable only
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_count_ = 0;
};

struct EvalReport {
  double auc = 0.0;
  double gauc = 0.0;  // NaN when no user grouping is available
  double logloss = 0.0;
  std::int64_t n_examples = 0;
  std::int64_t n_users_scored = 0;
  double wall_time_sec = 0.0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double mean_train_loss = 0.0;
  EvalReport eval;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::int64_t epochs = 5;
  std::int64_t batch_size = 256;
  std::uint64_t seed = 1;
  bool shuffle = true;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  EvalReport final_eval;
};

// Batched scoring of a dataset.
std::vector<double> score_dataset(const Model& model, const Dataset& data,
                                  std::int64_t batch_size);

EvalReport evaluate(const Model& model, const Dataset& data, std::int64_t batch_size);

// Deterministic given config.seed (fixed shuffle order). Per-epoch mean
// training loss is recorded along with evaluation metrics on eval_data.
// Throws NumericError naming the batch if the loss goes non-finite.
TrainResult train(Model& model, const Dataset& train_data, const Dataset& eval_data,
                  const TrainConfig& config);

// --- finite-difference gradient checking ------------------------------------

struct GradCheckGroup {
  std::string name;
  std::int64_t count = 0;       // scalars checked
  double max_rel_err = 0.0;
  bool trainable = true;
  bool frozen_grad_zero = true; // for non-trainable groups
};

struct GradCheckResult {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0.0;      // over trainable parameters
  bool frozen_exact_zero = true; // frozen Q0/K0 gradients are exactly zero
};

// Central finite differences over every trainable scalar of the model
// against the analytic gradients of loss(forward(batch)). Relative error is
// |analytic - fd| / max(|analytic|, |fd|, 1e-6).
GradCheckResult gradcheck_model(const Model& model, const FeatureBatch& batch,
                                double fd_step = 1e-5);

}  // namespace mgdin
