#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mgdin/model.hpp"
#include "mgdin/train.hpp"
#include "support/reference_forward.hpp"
#include "support/testers.hpp"

using namespace mgdin;
using i64 = std::int64_t;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.granularities = {1, 2};
  c.layers = 2;
  c.d_embed = 2;
  c.d_model = 4;
  c.d_ff = 8;
  c.head_hidden = {8};
  return c;
}

FeatureSchema small_schema() { return FeatureSchema::with_default_names({3, 3, 3, 3}); }

FeatureBatch random_batch(const FeatureSchema& schema, i64 B, Rng& rng) {
  FeatureBatch b;
  b.batch_size = B;
  b.n_features = schema.n_features();
  for (i64 r = 0; r < B; ++r) {
    for (i64 j = 0; j < schema.n_features(); ++j)
      b.ids.push_back(static_cast<i64>(
          rng.next_below(static_cast<std::uint64_t>(schema.cardinalities[static_cast<std::size_t>(j)]))));
    b.labels.push_back(rng.next_double() < 0.5 ? 0.0 : 1.0);
  }
  return b;
}

}  // namespace

TEST_CASE("parameter count matches the hand count") {
  Model model = build_model(small_config(), small_schema(), 3);
  // embeddings: 4 tables of 3x2 plus the shared null row
  const i64 embeds = 4 * 3 * 2 + 2;
  // window g=1: in 2->4 affine; window g=2: in 4->4 affine; q0/k0 each 4x4
  const i64 win_in = (2 * 4 + 4) + (4 * 4 + 4);
  const i64 q0k0 = 2 * 2 * (4 * 4);
  // per layer: qkv 3*16, ffn 4*8+8+8*4+4, ln gains/biases 4*4
  const i64 per_layer = 3 * 16 + (4 * 8 + 8 + 8 * 4 + 4) + 4 * 4;
  const i64 layers = 2 * 2 * per_layer;
  // head: concat width 8 -> 8 hidden -> 1
  const i64 head = (8 * 8 + 8) + (8 * 1 + 1);
  const i64 expected = embeds + win_in + q0k0 + layers + head;
  CHECK(parameter_count(model) == expected);
  CHECK(expected == 763);

  // every parameter appears exactly once in the flat enumeration
  auto params = flat_params(model);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = i + 1; j < params.size(); ++j) {
      CHECK(params[i].name != params[j].name);
      CHECK_FALSE(params[i].tensor.same_storage(params[j].tensor));
    }
}

TEST_CASE("build_model is deterministic given the seed") {
  Model a = build_model(small_config(), small_schema(), 42);
  Model b = build_model(small_config(), small_schema(), 42);
  auto pa = flat_params(a), pb = flat_params(b);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::memcmp(pa[i].tensor.values().data(), pb[i].tensor.values().data(),
                      sizeof(double) * pa[i].tensor.values().size()) == 0);
  }
  Model c = build_model(small_config(), small_schema(), 43);
  auto pc = flat_params(c);
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].tensor.values()[0] != pc[i].tensor.values()[0]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("config validation and ablation semantics") {
  auto cfg = small_config();
  cfg.without_mg = true;
  CHECK_THROWS_AS(build_model(cfg, small_schema(), 1), ConfigError);  // K > 1

  cfg.granularities = {2};
  Model m = build_model(cfg, small_schema(), 1);
  CHECK(m.params.windows.size() == 1);

  auto di = small_config();
  di.without_di = true;
  Model mdi = build_model(di, small_schema(), 1);
  for (double r : mdi.config.ratios) CHECK(r == 1.0);

  auto bad = small_config();
  bad.granularities = {1, 9};  // exceeds n_features
  CHECK_THROWS_AS(build_model(bad, small_schema(), 1), ConfigError);

  auto bad_ratio = small_config();
  bad_ratio.ratios = {0.5, 0.9};  // must end at 1.0
  CHECK_THROWS_AS(build_model(bad_ratio, small_schema(), 1), ConfigError);
}

TEST_CASE("forward stays in (0,1) and records one score matrix per window") {
  Rng rng(5);
  Model model = build_model(small_config(), small_schema(), 7);
  FeatureBatch batch = random_batch(small_schema(), 6, rng);
  ForwardArtifacts artifacts;
  Tensor y = forward(nullptr, model, batch, &artifacts);
  REQUIRE(y.shape() == Shape{6});
  for (double v : y.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(artifacts.layer0_scores.size() == 2);
  CHECK(artifacts.mask_schedules.size() == 2);
  // per-example mask storage matches the accounting helper
  i64 entries = 0;
  for (const auto& sched : artifacts.mask_schedules) {
    const auto& mask = sched.masks[0];
    entries += mask.dim(1) * mask.dim(2);
  }
  CHECK(entries == mask_entries_per_example(4, {1, 2}));
}

TEST_CASE("degenerate architecture: one window covering all features") {
  auto cfg = small_config();
  cfg.granularities = {4};  // m = 1
  Rng rng(6);
  Model model = build_model(cfg, small_schema(), 8);
  FeatureBatch batch = random_batch(small_schema(), 3, rng);
  ForwardArtifacts artifacts;
  Tensor y = forward(nullptr, model, batch, &artifacts);
  for (double v : y.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // 1x1 score matrix, all masks all-ones
  CHECK(artifacts.layer0_scores[0].shape() == Shape{3, 1, 1});
  for (const auto& mask : artifacts.mask_schedules[0].masks)
    for (double v : mask.values()) CHECK(v == 1.0);
}

TEST_CASE("loss values") {
  Tensor labels = Tensor::from_values({2}, {1.0, 0.0});
  Tensor half = Tensor::from_values({2}, {0.5, 0.5});
  CHECK(loss(nullptr, half, labels, 1e-12).scalar_value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor exact = Tensor::from_values({2}, {1.0, 0.0});
  CHECK(loss(nullptr, exact, labels, 1e-12).scalar_value() < 1e-10);

  Tensor pred = Tensor::from_values({2}, {0.8, 0.3});
  const double expect = -(std::log(0.8) + std::log(0.7)) / 2.0;
  CHECK(loss(nullptr, pred, labels, 1e-12).scalar_value() ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss(nullptr, pred, labels, 1e-12).scalar_value() ==
        doctest::Approx(0.28990).epsilon(1e-4));
}

TEST_CASE("w/o DI equals the mask-free reference forward") {
  auto cfg = small_config();
  cfg.without_di = true;
  Rng rng(7);
  Model model = build_model(cfg, small_schema(), 11);
  for (int rep = 0; rep < 5; ++rep) {
    FeatureBatch batch = random_batch(small_schema(), 5, rng);
    const auto got = predict(model, batch);
    const auto want = mgdin::testing::reference_forward_nomask(model, batch);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - want[i]) < 1e-6);
  }
}

TEST_CASE("end-to-end gradient check on the small config") {
  Rng rng(8);
  Model model = build_model(small_config(), small_schema(), 13);
  FeatureBatch batch = random_batch(small_schema(), 4, rng);
  // ensure both classes appear
  batch.labels = {1.0, 0.0, 1.0, 0.0};
  const GradCheckResult result = gradcheck_model(model, batch);
  CHECK(result.max_rel_err < 1e-4);
  CHECK(result.frozen_exact_zero);
}

TEST_CASE("tie_q0 shares layer-1 projections and trains them") {
  auto cfg = small_config();
  cfg.tie_q0 = true;
  Model model = build_model(cfg, small_schema(), 17);
  for (const auto& w : model.params.windows) {
    CHECK(w.q0.same_storage(w.layers[0].q));
    CHECK(w.k0.same_storage(w.layers[0].k));
    CHECK(w.q0.requires_grad());
  }
  // flat enumeration still lists every parameter exactly once
  auto params = flat_params(model);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = i + 1; j < params.size(); ++j)
      CHECK_FALSE(params[i].tensor.same_storage(params[j].tensor));
}

TEST_CASE("embedding-permutation equivariance inside a shared group (single group)") {
  // n = 2 and one window of g = 2: features 0 and 1 share the only group, so
  // swapping them plus the input projection's row blocks is an identity.
  ModelConfig cfg;
  cfg.granularities = {2};
  cfg.layers = 2;
  cfg.d_embed = 3;
  cfg.d_model = 4;
  cfg.d_ff = 8;
  cfg.head_hidden = {8};
  FeatureSchema schema = FeatureSchema::with_default_names({5, 5});

  Model base = build_model(cfg, schema, 21);
  Model swapped = build_model(cfg, schema, 21);
  std::swap(swapped.params.embeddings.tables[0], swapped.params.embeddings.tables[1]);
  {
    auto& w = swapped.params.windows[0];
    auto vals = w.in_w.values_mut();
    const i64 cols = w.in_w.dim(1);
    for (i64 r = 0; r < cfg.d_embed; ++r)
      for (i64 c = 0; c < cols; ++c)
        std::swap(vals[static_cast<std::size_t>(r * cols + c)],
                  vals[static_cast<std::size_t>((cfg.d_embed + r) * cols + c)]);
  }

  Rng rng(22);
  FeatureBatch batch = random_batch(schema, 6, rng);
  FeatureBatch permuted = batch;
  for (i64 r = 0; r < batch.batch_size; ++r)
    std::swap(permuted.ids[static_cast<std::size_t>(r * 2 + 0)],
              permuted.ids[static_cast<std::size_t>(r * 2 + 1)]);

  const auto y_base = predict(base, batch);
  const auto y_swap = predict(swapped, permuted);
  for (std::size_t i = 0; i < y_base.size(); ++i)
    CHECK(std::abs(y_base[i] - y_swap[i]) < 1e-10);
}

TEST_CASE("embedding-permutation equivariance, slot pair swapped in every group") {
  // The input projection is shared across a window's groups, so the identity
  // for multi-group windows permutes the same slot pair in every group:
  // pi = (1 0 3 2) together with the matching W_in row-block swaps.
  ModelConfig cfg;
  cfg.granularities = {2, 4};
  cfg.layers = 2;
  cfg.d_embed = 3;
  cfg.d_model = 4;
  cfg.d_ff = 8;
  cfg.head_hidden = {8};
  FeatureSchema schema = FeatureSchema::with_default_names({5, 5, 5, 5});

  Model base = build_model(cfg, schema, 21);
  Model swapped = build_model(cfg, schema, 21);
  std::swap(swapped.params.embeddings.tables[0], swapped.params.embeddings.tables[1]);
  std::swap(swapped.params.embeddings.tables[2], swapped.params.embeddings.tables[3]);
  for (auto& w : swapped.params.windows) {
    auto vals = w.in_w.values_mut();
    const i64 cols = w.in_w.dim(1);
    const i64 slots = w.granularity;  // slots per group
    // swap slot 2k with slot 2k+1 within each group's row blocks
    for (i64 s = 0; s + 1 < slots; s += 2)
      for (i64 r = 0; r < cfg.d_embed; ++r)
        for (i64 c = 0; c < cols; ++c)
          std::swap(vals[static_cast<std::size_t>(((s * cfg.d_embed) + r) * cols + c)],
                    vals[static_cast<std::size_t>((((s + 1) * cfg.d_embed) + r) * cols + c)]);
  }

  Rng rng(22);
  FeatureBatch batch = random_batch(schema, 6, rng);
  FeatureBatch permuted = batch;
  for (i64 r = 0; r < batch.batch_size; ++r) {
    std::swap(permuted.ids[static_cast<std::size_t>(r * 4 + 0)],
              permuted.ids[static_cast<std::size_t>(r * 4 + 1)]);
    std::swap(permuted.ids[static_cast<std::size_t>(r * 4 + 2)],
              permuted.ids[static_cast<std::size_t>(r * 4 + 3)]);
  }

  const auto y_base = predict(base, batch);
  const auto y_swap = predict(swapped, permuted);
  for (std::size_t i = 0; i < y_base.size(); ++i)
    CHECK(std::abs(y_base[i] - y_swap[i]) < 1e-10);
}

TEST_CASE("checkpoint round-trip restores config, schema and fp32 values") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mgdin_model_test";
  fs::create_directories(dir);
  const auto path = (dir / "model.mgdn").string();

  Model model = build_model(small_config(), small_schema(), 33);
  save_checkpoint(path, model);
  Model back = load_checkpoint(path);

  CHECK(back.seed == model.seed);
  CHECK(back.schema.cardinalities == model.schema.cardinalities);
  CHECK(back.config.granularities == model.config.granularities);
  CHECK(back.config.ratios == model.config.ratios);

  auto pa = flat_params(model), pb = flat_params(back);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].tensor.values();
    const auto vb = pb[i].tensor.values();
    for (std::size_t k = 0; k < va.size(); ++k)
      CHECK(static_cast<float>(va[k]) == static_cast<float>(vb[k]));
  }

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.mgdn").string()), DataError);
}

TEST_CASE("feature permutation config reorders the sequence before grouping") {
  auto cfg = small_config();
  cfg.feature_order = {3, 2, 1, 0};
  Model model = build_model(cfg, small_schema(), 44);
  Rng rng(45);
  FeatureBatch batch = random_batch(small_schema(), 4, rng);
  CHECK_NOTHROW(predict(model, batch));

  cfg.feature_order = {0, 0, 1, 2};
  CHECK_THROWS_AS(build_model(cfg, small_schema(), 44), ConfigError);
}
