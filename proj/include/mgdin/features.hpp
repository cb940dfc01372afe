#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgdin/common.hpp"
#include "mgdin/tensor.hpp"

namespace mgdin {

struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<std::int64_t> cardinalities;

  std::int64_t n_features() const { return static_cast<std::int64_t>(cardinalities.size()); }
  void validate() const;

  // Schema with default names f_0..f_{n-1}.
  static FeatureSchema with_default_names(std::vector<std::int64_t> cardinalities);
};

// One trainable matrix per feature plus a shared trainable null row used to
// pad non-divisible groupings.
struct EmbeddingTable {
  std::vector<Tensor> tables;  // tables[j]: [cardinality_j, d_embed]
  Tensor null_row;             // [d_embed]
  std::int64_t d_embed = 0;
};

EmbeddingTable make_embedding_table(const FeatureSchema& schema, std::int64_t d_embed,
                                    Rng& rng);

struct FeatureBatch {
  std::vector<std::int64_t> ids;  // batch_size x n_features, row-major
  std::vector<double> labels;     // batch_size, values in {0,1}
  std::int64_t batch_size = 0;
  std::int64_t n_features = 0;

  std::int64_t id_at(std::int64_t row, std::int64_t feature) const {
    return ids[static_cast<std::size_t>(row * n_features + feature)];
  }
};

// Looks up every feature id; output [batch, n_features, d_embed]. Gradients
// accumulate only into looked-up rows.
Tensor embed_batch(Tape* tape, const EmbeddingTable& table, const FeatureBatch& batch);

struct Dataset {
  FeatureSchema schema;
  std::vector<std::int64_t> ids;  // n_rows x n_features
  std::vector<double> labels;
  std::vector<std::int64_t> user_ids;     // empty when absent
  std::vector<double> true_logits;        // synthetic data only; empty otherwise

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  bool has_user_ids() const { return !user_ids.empty(); }
  bool has_true_logits() const { return !true_logits.empty(); }

  FeatureBatch batch_rows(std::span<const std::int64_t> rows) const;
  FeatureBatch batch_range(std::int64_t begin, std::int64_t end) const;
};

// Synthetic heterogeneous-CTR generator. Ground truth is a sum of pairwise
// interaction terms; each pair's weight table is rank-1, derived by hashing
// (table_seed, pair index, side, id) so any (id_a, id_b) weight is available
// without materializing large tables:
//   u = 2*unit(splitmix) - 1 for each side, weight = amplitude * u_a * u_b.
struct SyntheticSpec {
  std::int64_t n_features = 0;
  std::vector<std::int64_t> cardinalities;
  double zipf_exponent = 1.1;  // 0 => uniform ids
  struct Pair {
    std::int64_t a = 0;
    std::int64_t b = 0;
    double amplitude = 1.0;
  };
  std::vector<Pair> pairs;
  double bias = 0.0;
  // label ~ Bernoulli(sigmoid(logit / temperature)); 0 => hard threshold.
  double temperature = 1.0;
  // Feature whose id doubles as the user id for GAUC grouping; -1 disables.
  std::int64_t user_feature = 0;
  // Seed of the derived weight tables; part of the spec so that independently
  // seeded train/test sets share the same ground truth.
  std::uint64_t table_seed = 1;

  void validate() const;
};

// Deterministic: rows are seeded individually from (seed, row), so output is
// byte-identical regardless of backend or thread count.
Dataset generate_synthetic(const SyntheticSpec& spec, std::int64_t n_rows,
                           std::uint64_t seed);

double synthetic_true_logit(const SyntheticSpec& spec,
                            std::span<const std::int64_t> row_ids);
double synthetic_pair_weight(const SyntheticSpec& spec, std::size_t pair_index,
                             std::int64_t id_a, std::int64_t id_b);

// Out-of-vocabulary policy: raw ids >= cardinality are remapped by
//   splitmix64(splitmix64(raw) ^ splitmix64(0x9e37 + feature_index)) % cardinality.
std::int64_t hash_id_into(std::int64_t raw, std::int64_t feature_index,
                          std::int64_t cardinality);

// CSV format: header "f_0,...,f_{n-1},label[,user_id]", integer ids, one
// record per '\n'-terminated line.
Dataset load_csv(const std::string& path, const FeatureSchema& schema);
void write_csv(const std::string& path, const Dataset& data);
void write_logits(const std::string& path, const Dataset& data);
std::vector<double> read_logits(const std::string& path);

}  // namespace mgdin
