#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgdin/attention.hpp"
#include "mgdin/features.hpp"
#include "mgdin/grouping.hpp"
#include "mgdin/tensor.hpp"

namespace mgdin {

struct ModelConfig {
  std::vector<std::int64_t> granularities = {1, 2};
  std::int64_t layers = 3;
  std::vector<double> ratios;  // empty -> l/L schedule
  std::int64_t d_embed = 8;
  std::int64_t d_model = 32;
  std::int64_t d_ff = 0;  // 0 -> 2 * d_model
  std::vector<std::int64_t> head_hidden = {64, 32};
  Pooling pooling = Pooling::Mean;
  // Ablations (reachable purely through config):
  bool without_mg = false;  // single window
  bool without_di = false;  // all sparsity ratios forced to 1.0
  ScoreNorm score_norm = ScoreNorm::None;
  TopkScope topk_scope = TopkScope::Global;
  GroupCombine group_combine = GroupCombine::Concat;
  bool tie_q0 = false;  // share Q0/K0 with layer 1 so they co-train
  std::vector<std::int64_t> feature_order;  // optional permutation before grouping
  double ln_eps = 1e-5;
  double prediction_clamp = 1e-12;

  std::int64_t effective_d_ff() const { return d_ff > 0 ? d_ff : 2 * d_model; }
  void validate(std::int64_t n_features) const;
  // Copy with ratios/d_ff made explicit and without_di applied.
  ModelConfig resolved() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct WindowParams {
  std::int64_t granularity = 0;
  Tensor in_w, in_b;  // [g*d_embed or d_embed, d_model], [d_model]
  Tensor q0, k0;      // frozen layer-0 score projections
  std::vector<LayerParams> layers;
};

struct HeadLayer {
  Tensor w, b;
};

struct ModelParameters {
  EmbeddingTable embeddings;
  std::vector<WindowParams> windows;
  std::vector<HeadLayer> head;  // hidden layers then the final scalar layer
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

struct Model {
  ModelConfig config;  // stored resolved
  FeatureSchema schema;
  ModelParameters params;
  std::uint64_t seed = 0;
};

// Allocates and initializes all parameters; deterministic given seed.
Model build_model(const ModelConfig& config, const FeatureSchema& schema,
                  std::uint64_t seed);

// Every parameter exactly once. With tie_q0 the shared Q0/K0 appear only as
// their layer-1 entries.
std::vector<NamedParam> flat_params(const Model& model);
std::int64_t parameter_count(const Model& model);

struct ForwardArtifacts {
  std::vector<Tensor> layer0_scores;
  std::vector<MaskSchedule> mask_schedules;
};

// Full forward pass; returns y_hat [batch] with every entry in (0, 1).
Tensor forward(Tape* tape, const Model& model, const FeatureBatch& batch,
               ForwardArtifacts* artifacts = nullptr);

// Mean over the batch of -[y log p + (1-y) log(1-p)]; p clamped to
// [clamp_eps, 1 - clamp_eps].
Tensor loss(Tape* tape, const Tensor& y_hat, const Tensor& labels, double clamp_eps);

Tensor labels_tensor(const FeatureBatch& batch);

// Detached forward, returns plain probabilities.
std::vector<double> predict(const Model& model, const FeatureBatch& batch);

// Checkpoint container (versioned, see README): magic "MGDNCKPT", u32
// format version, u64 JSON header length, JSON header (seed, config echo,
// schema echo, tensor directory), then all tensors as row-major fp32
// little-endian in directory order.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace mgdin
