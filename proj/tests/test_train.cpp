#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "mgdin/train.hpp"
#include "support/testers.hpp"

using namespace mgdin;
using i64 = std::int64_t;

namespace {

// Hard-threshold labels: perfectly separable by construction.
SyntheticSpec separable_spec() {
  SyntheticSpec spec;
  spec.n_features = 2;
  spec.cardinalities = {4, 4};
  spec.zipf_exponent = 0.0;
  spec.pairs = {{0, 1, 3.0}};
  spec.temperature = 0.0;
  spec.user_feature = 0;
  spec.table_seed = 9;
  return spec;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.granularities = {1};
  c.layers = 2;
  c.d_embed = 4;
  c.d_model = 8;
  c.head_hidden = {16};
  return c;
}

}  // namespace

TEST_CASE("learning rate zero leaves parameters bit-identical") {
  Dataset data = generate_synthetic(separable_spec(), 300, 1);
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Model model = build_model(tiny_model(), data.schema, 2);
    std::vector<std::vector<double>> before;
    for (auto& np : flat_params(model))
      before.emplace_back(np.tensor.values().begin(), np.tensor.values().end());

    TrainConfig tc;
    tc.optimizer.kind = kind;
    tc.optimizer.lr = 0.0;
    tc.epochs = 2;
    tc.batch_size = 64;
    tc.seed = 3;
    train(model, data, data, tc);

    auto params = flat_params(model);
    for (std::size_t i = 0; i < params.size(); ++i)
      CHECK(std::memcmp(params[i].tensor.values().data(), before[i].data(),
                        sizeof(double) * before[i].size()) == 0);
  }
}

TEST_CASE("separable synthetic task trains to low loss") {
  Dataset train_data = generate_synthetic(separable_spec(), 2000, 5);
  Dataset test_data = generate_synthetic(separable_spec(), 500, 6);
  Model model = build_model(tiny_model(), train_data.schema, 7);

  TrainConfig tc;
  tc.optimizer.lr = 5e-3;
  tc.epochs = 20;
  tc.batch_size = 128;
  tc.seed = 8;
  TrainResult result = train(model, train_data, test_data, tc);

  CHECK(result.trace.back().mean_train_loss < 0.1 * std::log(2.0));
  CHECK(result.final_eval.auc > 0.99);
}

TEST_CASE("training is deterministic given the seed") {
  Dataset data = generate_synthetic(separable_spec(), 600, 11);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 64;
  tc.seed = 12;

  Model m1 = build_model(tiny_model(), data.schema, 13);
  Model m2 = build_model(tiny_model(), data.schema, 13);
  TrainResult r1 = train(m1, data, data, tc);
  TrainResult r2 = train(m2, data, data, tc);
  REQUIRE(r1.trace.size() == r2.trace.size());
  for (std::size_t e = 0; e < r1.trace.size(); ++e) {
    CHECK(r1.trace[e].mean_train_loss == r2.trace[e].mean_train_loss);
    CHECK(r1.trace[e].eval.auc == r2.trace[e].eval.auc);
    CHECK(r1.trace[e].eval.logloss == r2.trace[e].eval.logloss);
  }
}

TEST_CASE("loss decreases from the first to the last epoch across 5 seeds") {
  Dataset train_data = generate_synthetic(separable_spec(), 1500, 21);
  Dataset test_data = generate_synthetic(separable_spec(), 300, 22);
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Model model = build_model(tiny_model(), train_data.schema, seed);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 128;
    tc.seed = seed;
    TrainResult result = train(model, train_data, test_data, tc);
    CHECK(result.trace.back().mean_train_loss < result.trace.front().mean_train_loss);
  }
}

TEST_CASE("non-finite loss aborts with the batch named") {
  Dataset data = generate_synthetic(separable_spec(), 300, 31);
  Model model = build_model(tiny_model(), data.schema, 32);
  // poison a head parameter (downstream of every rectifier)
  flat_params(model).back().tensor.values_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 64;
  CHECK_THROWS_WITH_AS(train(model, data, data, tc), doctest::Contains("batch 0"),
                       NumericError);
}

TEST_CASE("epochs zero produces an eval report without touching parameters") {
  Dataset data = generate_synthetic(separable_spec(), 200, 41);
  Model model = build_model(tiny_model(), data.schema, 42);
  std::vector<double> before(flat_params(model)[0].tensor.values().begin(),
                             flat_params(model)[0].tensor.values().end());
  TrainConfig tc;
  tc.epochs = 0;
  TrainResult result = train(model, data, data, tc);
  CHECK(result.trace.empty());
  CHECK(result.final_eval.n_examples == 200);
  CHECK(std::isfinite(result.final_eval.auc));
  CHECK(std::memcmp(flat_params(model)[0].tensor.values().data(), before.data(),
                    sizeof(double) * before.size()) == 0);
}

TEST_CASE("evaluate fills the GAUC fields from user ids") {
  Dataset data = generate_synthetic(separable_spec(), 400, 51);
  Model model = build_model(tiny_model(), data.schema, 52);
  EvalReport report = evaluate(model, data, 128);
  CHECK(report.n_examples == 400);
  CHECK(report.auc >= 0.0);
  CHECK(report.auc <= 1.0);
  CHECK(report.n_users_scored > 0);
  CHECK(report.gauc >= 0.0);
  CHECK(report.gauc <= 1.0);
  CHECK(report.logloss >= 0.0);
  CHECK(report.wall_time_sec >= 0.0);

  Dataset no_users = data;
  no_users.user_ids.clear();
  EvalReport r2 = evaluate(model, no_users, 128);
  CHECK(std::isnan(r2.gauc));
  CHECK(r2.n_users_scored == 0);
}

TEST_CASE("adam moment buffers are shape-congruent and updates move parameters") {
  Dataset data = generate_synthetic(separable_spec(), 300, 61);
  Model model = build_model(tiny_model(), data.schema, 62);
  // win0.in_proj.w certainly receives gradient every step
  std::vector<double> before(flat_params(model)[3].tensor.values().begin(),
                             flat_params(model)[3].tensor.values().end());
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 300;
  tc.optimizer.lr = 1e-2;
  train(model, data, data, tc);
  // some movement in a parameter that certainly received gradient
  bool moved = false;
  const auto now = flat_params(model)[3].tensor.values();
  for (std::size_t i = 0; i < before.size(); ++i)
    if (now[i] != before[i]) moved = true;
  CHECK(moved);
}
