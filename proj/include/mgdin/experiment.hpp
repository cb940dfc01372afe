#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgdin/features.hpp"
#include "mgdin/model.hpp"
#include "mgdin/train.hpp"

namespace mgdin {

struct SyntheticDataConfig {
  SyntheticSpec spec;
  std::int64_t rows_train = 50000;
  std::int64_t rows_test = 10000;
  std::uint64_t seed = 42;  // dataset seed; train/test streams are derived from it
};

struct CsvDataConfig {
  std::string train_path;
  std::string test_path;
  FeatureSchema schema;
  // Optional stored true logits for the test rows (oracle reference).
  std::string test_logits_path;
};

struct DataConfig {
  std::optional<SyntheticDataConfig> synthetic;
  std::optional<CsvDataConfig> csv;
  void validate() const;  // exactly one source; referenced paths exist
};

struct TrainingSection {
  OptimizerConfig optimizer;
  std::int64_t epochs = 3;
  std::int64_t batch_size = 256;
  std::vector<std::uint64_t> seeds = {1};
};

enum class SweepAxis { GranularityCount, DeferredRatios };

struct SweepConfig {
  SweepAxis axis = SweepAxis::GranularityCount;
  std::vector<std::int64_t> k_values;
  std::vector<std::vector<double>> ratio_schedules;
};

struct OutputConfig {
  std::string dir = "results";
  bool write_csv = true;
  bool write_text = true;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainingSection training;
  std::optional<SweepConfig> sweep;
  OutputConfig output;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::string& path);

struct LoadedData {
  Dataset train;
  Dataset test;
};
LoadedData load_data(const DataConfig& config);

// Ablation variants are pure config rewrites: "mgdin" is the base config,
// "wo_mg" keeps only the first granularity, "wo_di" forces full activation.
ModelConfig variant_config(const ModelConfig& base, const std::string& variant);
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"mgdin", "wo_mg", "wo_di"};
  return v;
}

struct ResultRow {
  std::string variant;
  std::string axis;  // sweep axis value, empty otherwise
  std::uint64_t seed = 0;
  double auc = 0.0;
  double gauc = 0.0;
  double logloss = 0.0;
  double wall_time_sec = 0.0;
};

struct AggregateRow {
  std::string variant;
  std::string axis;
  std::int64_t n = 0;
  double auc_mean = 0.0, auc_std = 0.0;
  double gauc_mean = 0.0, gauc_std = 0.0;
  double logloss_mean = 0.0, logloss_std = 0.0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
  std::vector<AggregateRow> aggregates() const;
  std::string to_csv() const;            // per-seed rows
  std::string to_aggregate_csv() const;  // mean/std per variant
  std::string to_text() const;           // aligned plain text incl. aggregates
  std::string to_long_csv() const;       // axis,variant,seed,metric,value
};

std::string csv_quote(const std::string& field);

struct RunOutput {
  ResultRow row;
  std::vector<EpochRecord> trace;
  Model model;
};

// One full train+eval with the given model config and training seed.
RunOutput run_training(const ExperimentConfig& config, const ModelConfig& model_config,
                       const LoadedData& data, std::uint64_t seed,
                       const std::string& variant, const std::string& axis);

// Creates <base>/<UTC timestamp>-<command>[ -N ] and returns it.
std::filesystem::path make_run_dir(const std::string& base, const std::string& command);

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const ExperimentConfig& config,
                    const std::vector<std::uint64_t>& seeds);

std::string eval_report_text(const EvalReport& report);
void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<EpochRecord>& trace);

// --- CLI commands ------------------------------------------------------------

// Writes train/test CSVs, true-logit files and a manifest to out_path.
void cmd_generate(const ExperimentConfig& config, const std::string& out_path,
                  bool force);

// Trains with the first (or overridden) seed; writes checkpoint, trace and
// eval report into a fresh run directory. Returns that directory.
std::filesystem::path cmd_train(const ExperimentConfig& config,
                                std::optional<std::uint64_t> seed_override,
                                const std::string& out_override);

// Evaluates a checkpoint on the config's test split.
EvalReport cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                    const std::string& out_override);

// {MGDIN, w/o MG, w/o DI} x seeds, all else held fixed.
ResultsTable cmd_ablate(const ExperimentConfig& config, const std::string& out_override,
                        int jobs);

// One run per axis point per seed.
ResultsTable cmd_sweep(const ExperimentConfig& config, const std::string& out_override,
                       int jobs);

// The finite-difference suite on the config's model (or the built-in desk
// setup when no config is given).
struct GradcheckSetup {
  Model model;
  FeatureBatch batch;
};
GradcheckSetup default_gradcheck_setup(std::uint64_t seed);
GradcheckSetup gradcheck_setup_from_config(const ExperimentConfig& config,
                                           std::uint64_t seed);
GradCheckResult cmd_gradcheck(const std::optional<ExperimentConfig>& config,
                              std::uint64_t seed, std::ostream& out);

}  // namespace mgdin
