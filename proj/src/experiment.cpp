#include "mgdin/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mgdin/metrics.hpp"

namespace mgdin {

namespace fs = std::filesystem;
using i64 = std::int64_t;
using u64 = std::uint64_t;
using json = nlohmann::json;

// --- config (de)serialization ------------------------------------------------

namespace {

void spec_to_json(json& j, const SyntheticSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.pairs)
    pairs.push_back({{"a", p.a}, {"b", p.b}, {"amplitude", p.amplitude}});
  j["n_features"] = s.n_features;
  j["cardinalities"] = s.cardinalities;
  j["zipf_exponent"] = s.zipf_exponent;
  j["pairs"] = pairs;
  j["bias"] = s.bias;
  j["temperature"] = s.temperature;
  j["user_feature"] = s.user_feature;
  j["table_seed"] = s.table_seed;
}

SyntheticSpec spec_from_json(const json& j) {
  SyntheticSpec s;
  s.cardinalities = j.at("cardinalities").get<std::vector<i64>>();
  s.n_features = j.value("n_features", static_cast<i64>(s.cardinalities.size()));
  s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
  if (j.contains("pairs")) {
    for (const auto& p : j.at("pairs")) {
      SyntheticSpec::Pair pair;
      pair.a = p.at("a").get<i64>();
      pair.b = p.at("b").get<i64>();
      pair.amplitude = p.value("amplitude", 1.0);
      s.pairs.push_back(pair);
    }
  }
  s.bias = j.value("bias", s.bias);
  s.temperature = j.value("temperature", s.temperature);
  s.user_feature = j.value("user_feature", s.user_feature);
  s.table_seed = j.value("table_seed", s.table_seed);
  return s;
}

std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("training: unknown optimizer '" + s + "' (adam|sgd)");
}

}  // namespace

void DataConfig::validate() const {
  if (synthetic.has_value() == csv.has_value())
    throw ConfigError("data: exactly one of 'synthetic' or 'csv' must be given");
  if (synthetic) {
    synthetic->spec.validate();
    if (synthetic->rows_train < 1 || synthetic->rows_test < 1)
      throw ConfigError("data: rows_train and rows_test must be positive");
  } else {
    csv->schema.validate();
    if (!fs::exists(csv->train_path))
      throw ConfigError("data: train csv does not exist: " + csv->train_path);
    if (!fs::exists(csv->test_path))
      throw ConfigError("data: test csv does not exist: " + csv->test_path);
    if (!csv->test_logits_path.empty() && !fs::exists(csv->test_logits_path))
      throw ConfigError("data: test logits file does not exist: " + csv->test_logits_path);
  }
}

void ExperimentConfig::validate() const {
  data.validate();
  const i64 n = data.synthetic ? data.synthetic->spec.n_features
                               : data.csv->schema.n_features();
  model.validate(n);
  if (training.seeds.empty()) throw ConfigError("training: seeds must be non-empty");
  if (training.epochs < 0) throw ConfigError("training: epochs must be >= 0");
  if (training.batch_size < 1) throw ConfigError("training: batch_size must be positive");
  if (sweep) {
    if (sweep->axis == SweepAxis::GranularityCount) {
      if (sweep->k_values.empty()) throw ConfigError("sweep: no K values");
      for (i64 k : sweep->k_values)
        if (k < 1 || k > static_cast<i64>(model.granularities.size()))
          throw ConfigError("sweep: K=" + std::to_string(k) +
                            " outside 1.." + std::to_string(model.granularities.size()));
    } else {
      if (sweep->ratio_schedules.empty()) throw ConfigError("sweep: no ratio schedules");
      for (const auto& r : sweep->ratio_schedules) validate_ratios(r, model.layers);
    }
  }
}

void to_json(json& j, const ExperimentConfig& c) {
  json data;
  if (c.data.synthetic) {
    json syn;
    spec_to_json(syn, c.data.synthetic->spec);
    syn["rows_train"] = c.data.synthetic->rows_train;
    syn["rows_test"] = c.data.synthetic->rows_test;
    syn["seed"] = c.data.synthetic->seed;
    data["synthetic"] = syn;
  }
  if (c.data.csv) {
    json csv;
    csv["train"] = c.data.csv->train_path;
    csv["test"] = c.data.csv->test_path;
    csv["cardinalities"] = c.data.csv->schema.cardinalities;
    csv["names"] = c.data.csv->schema.names;
    if (!c.data.csv->test_logits_path.empty())
      csv["test_logits"] = c.data.csv->test_logits_path;
    data["csv"] = csv;
  }
  json training;
  training["optimizer"] = optimizer_name(c.training.optimizer.kind);
  training["lr"] = c.training.optimizer.lr;
  training["beta1"] = c.training.optimizer.beta1;
  training["beta2"] = c.training.optimizer.beta2;
  training["adam_eps"] = c.training.optimizer.eps;
  training["epochs"] = c.training.epochs;
  training["batch_size"] = c.training.batch_size;
  training["seeds"] = c.training.seeds;

  j = json{{"data", data}, {"model", c.model}, {"training", training}};
  if (c.sweep) {
    json sweep;
    if (c.sweep->axis == SweepAxis::GranularityCount) {
      sweep["axis"] = "granularity_count";
      sweep["values"] = c.sweep->k_values;
    } else {
      sweep["axis"] = "deferred_ratios";
      sweep["values"] = c.sweep->ratio_schedules;
    }
    j["sweep"] = sweep;
  }
  j["output"] = json{{"dir", c.output.dir},
                     {"formats", [&] {
                        std::vector<std::string> f;
                        if (c.output.write_csv) f.push_back("csv");
                        if (c.output.write_text) f.push_back("text");
                        return f;
                      }()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  const json& data = j.at("data");
  if (data.contains("synthetic")) {
    const json& syn = data.at("synthetic");
    SyntheticDataConfig s;
    s.spec = spec_from_json(syn);
    s.rows_train = syn.value("rows_train", s.rows_train);
    s.rows_test = syn.value("rows_test", s.rows_test);
    s.seed = syn.value("seed", s.seed);
    c.data.synthetic = s;
  }
  if (data.contains("csv")) {
    const json& csv = data.at("csv");
    CsvDataConfig cc;
    cc.train_path = csv.at("train").get<std::string>();
    cc.test_path = csv.at("test").get<std::string>();
    auto cards = csv.at("cardinalities").get<std::vector<i64>>();
    if (csv.contains("names")) {
      cc.schema.names = csv.at("names").get<std::vector<std::string>>();
      cc.schema.cardinalities = std::move(cards);
    } else {
      cc.schema = FeatureSchema::with_default_names(std::move(cards));
    }
    cc.test_logits_path = csv.value("test_logits", std::string());
    c.data.csv = cc;
  }
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("training")) {
    const json& t = j.at("training");
    c.training.optimizer.kind = optimizer_from(t.value("optimizer", std::string("adam")));
    c.training.optimizer.lr = t.value("lr", c.training.optimizer.lr);
    c.training.optimizer.beta1 = t.value("beta1", c.training.optimizer.beta1);
    c.training.optimizer.beta2 = t.value("beta2", c.training.optimizer.beta2);
    c.training.optimizer.eps = t.value("adam_eps", c.training.optimizer.eps);
    c.training.epochs = t.value("epochs", c.training.epochs);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.seeds = t.value("seeds", c.training.seeds);
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    SweepConfig sweep;
    const std::string axis = s.at("axis").get<std::string>();
    if (axis == "granularity_count") {
      sweep.axis = SweepAxis::GranularityCount;
      sweep.k_values = s.at("values").get<std::vector<i64>>();
    } else if (axis == "deferred_ratios") {
      sweep.axis = SweepAxis::DeferredRatios;
      sweep.ratio_schedules = s.at("values").get<std::vector<std::vector<double>>>();
    } else {
      throw ConfigError("sweep: unknown axis '" + axis +
                        "' (granularity_count|deferred_ratios)");
    }
    c.sweep = sweep;
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    c.output.dir = o.value("dir", c.output.dir);
    if (o.contains("formats")) {
      const auto formats = o.at("formats").get<std::vector<std::string>>();
      c.output.write_csv = std::find(formats.begin(), formats.end(), "csv") != formats.end();
      c.output.write_text = std::find(formats.begin(), formats.end(), "text") != formats.end();
    }
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: " + path + " is not valid JSON");
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  c.validate();
  return c;
}

// --- data --------------------------------------------------------------------

LoadedData load_data(const DataConfig& config) {
  config.validate();
  LoadedData out;
  if (config.synthetic) {
    const auto& s = *config.synthetic;
    out.train = generate_synthetic(s.spec, s.rows_train, hash_combine(s.seed, 1));
    out.test = generate_synthetic(s.spec, s.rows_test, hash_combine(s.seed, 2));
  } else {
    out.train = load_csv(config.csv->train_path, config.csv->schema);
    out.test = load_csv(config.csv->test_path, config.csv->schema);
    if (!config.csv->test_logits_path.empty()) {
      auto logits = read_logits(config.csv->test_logits_path);
      if (static_cast<i64>(logits.size()) != out.test.size())
        throw DataError("data: test logits count " + std::to_string(logits.size()) +
                        " != test rows " + std::to_string(out.test.size()));
      out.test.true_logits = std::move(logits);
    }
  }
  return out;
}

ModelConfig variant_config(const ModelConfig& base, const std::string& variant) {
  ModelConfig c = base;
  if (variant == "mgdin") return c;
  if (variant == "wo_mg") {
    c.granularities = {base.granularities.front()};
    c.without_mg = true;
    return c;
  }
  if (variant == "wo_di") {
    c.without_di = true;
    return c;
  }
  throw ConfigError("unknown variant '" + variant + "' (mgdin|wo_mg|wo_di)");
}

// --- results table -----------------------------------------------------------

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    else out += ch;
  }
  out += "\"";
  return out;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct Stats {
  double mean = 0.0, stddev = 0.0;
};

Stats mean_std(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  double total = 0.0;
  for (double x : v) total += x;
  s.mean = total / static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

std::vector<AggregateRow> ResultsTable::aggregates() const {
  std::vector<AggregateRow> out;
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.variant, r.axis);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [variant, axis] : keys) {
    std::vector<double> aucs, gaucs, losses;
    for (const auto& r : rows) {
      if (r.variant != variant || r.axis != axis) continue;
      aucs.push_back(r.auc);
      gaucs.push_back(r.gauc);
      losses.push_back(r.logloss);
    }
    AggregateRow a;
    a.variant = variant;
    a.axis = axis;
    a.n = static_cast<i64>(aucs.size());
    const auto sa = mean_std(aucs);
    const auto sg = mean_std(gaucs);
    const auto sl = mean_std(losses);
    a.auc_mean = sa.mean;
    a.auc_std = sa.stddev;
    a.gauc_mean = sg.mean;
    a.gauc_std = sg.stddev;
    a.logloss_mean = sl.mean;
    a.logloss_std = sl.stddev;
    out.push_back(a);
  }
  return out;
}

std::string ResultsTable::to_csv() const {
  std::ostringstream os;
  os << "variant,axis,seed,auc,gauc,logloss,wall_time_sec\n";
  for (const auto& r : rows) {
    os << csv_quote(r.variant) << ',' << csv_quote(r.axis) << ',' << r.seed << ','
       << fmt(r.auc) << ',' << fmt(r.gauc) << ',' << fmt(r.logloss) << ','
       << fmt(r.wall_time_sec) << '\n';
  }
  return os.str();
}

std::string ResultsTable::to_aggregate_csv() const {
  std::ostringstream os;
  os << "variant,axis,n,auc_mean,auc_std,gauc_mean,gauc_std,logloss_mean,logloss_std\n";
  for (const auto& a : aggregates()) {
    os << csv_quote(a.variant) << ',' << csv_quote(a.axis) << ',' << a.n << ','
       << fmt(a.auc_mean) << ',' << fmt(a.auc_std) << ',' << fmt(a.gauc_mean) << ','
       << fmt(a.gauc_std) << ',' << fmt(a.logloss_mean) << ',' << fmt(a.logloss_std)
       << '\n';
  }
  return os.str();
}

std::string ResultsTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "variant" << std::setw(22) << "axis"
     << std::setw(12) << "seed" << std::setw(10) << "auc" << std::setw(10) << "gauc"
     << std::setw(10) << "logloss" << std::setw(10) << "wall_s" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.variant << std::setw(22)
       << (r.axis.empty() ? "-" : r.axis) << std::setw(12) << r.seed << std::setw(10)
       << fmt(r.auc) << std::setw(10) << fmt(r.gauc) << std::setw(10) << fmt(r.logloss)
       << std::setw(10) << fmt(r.wall_time_sec) << '\n';
  }
  os << '\n';
  os << std::left << std::setw(10) << "variant" << std::setw(22) << "axis"
     << std::setw(6) << "n" << std::setw(20) << "auc(mean+/-std)" << std::setw(20)
     << "gauc(mean+/-std)" << std::setw(20) << "logloss(mean+/-std)" << '\n';
  for (const auto& a : aggregates()) {
    os << std::left << std::setw(10) << a.variant << std::setw(22)
       << (a.axis.empty() ? "-" : a.axis) << std::setw(6) << a.n << std::setw(20)
       << (fmt(a.auc_mean) + "+/-" + fmt(a.auc_std)) << std::setw(20)
       << (fmt(a.gauc_mean) + "+/-" + fmt(a.gauc_std)) << std::setw(20)
       << (fmt(a.logloss_mean) + "+/-" + fmt(a.logloss_std)) << '\n';
  }
  return os.str();
}

std::string ResultsTable::to_long_csv() const {
  std::ostringstream os;
  os << "axis,variant,seed,metric,value\n";
  for (const auto& r : rows) {
    const std::string prefix =
        csv_quote(r.axis) + "," + csv_quote(r.variant) + "," + std::to_string(r.seed) + ",";
    os << prefix << "auc," << fmt(r.auc) << '\n';
    os << prefix << "gauc," << fmt(r.gauc) << '\n';
    os << prefix << "logloss," << fmt(r.logloss) << '\n';
    os << prefix << "wall_time_sec," << fmt(r.wall_time_sec) << '\n';
  }
  return os.str();
}

// --- runs --------------------------------------------------------------------

RunOutput run_training(const ExperimentConfig& config, const ModelConfig& model_config,
                       const LoadedData& data, u64 seed, const std::string& variant,
                       const std::string& axis) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput out;
  out.model = build_model(model_config, data.train.schema, seed);
  TrainConfig tc;
  tc.optimizer = config.training.optimizer;
  tc.epochs = config.training.epochs;
  tc.batch_size = config.training.batch_size;
  tc.seed = seed;
  TrainResult tr = train(out.model, data.train, data.test, tc);
  out.trace = std::move(tr.trace);
  out.row.variant = variant;
  out.row.axis = axis;
  out.row.seed = seed;
  out.row.auc = tr.final_eval.auc;
  out.row.gauc = tr.final_eval.gauc;
  out.row.logloss = tr.final_eval.logloss;
  out.row.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

fs::path make_run_dir(const std::string& base, const std::string& command) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
  fs::path dir = fs::path(base) / (std::string(stamp) + "-" + command);
  fs::path candidate = dir;
  int suffix = 2;
  while (fs::exists(candidate)) candidate = dir.string() + "-" + std::to_string(suffix++);
  fs::create_directories(candidate);
  return candidate;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const ExperimentConfig& config, const std::vector<u64>& seeds) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  char stamp[40];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  manifest["timestamp_utc"] = stamp;
  manifest["seeds"] = seeds;
  manifest["config"] = config;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("manifest: cannot write to " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

std::string eval_report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "auc " << fmt(r.auc) << '\n';
  os << "gauc " << fmt(r.gauc) << '\n';
  os << "logloss " << fmt(r.logloss) << '\n';
  os << "n_examples " << r.n_examples << '\n';
  os << "n_users_scored " << r.n_users_scored << '\n';
  os << "wall_time_sec " << fmt(r.wall_time_sec) << '\n';
  return os.str();
}

void write_trace_csv(const fs::path& path, const std::vector<EpochRecord>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("trace: cannot write to " + path.string());
  out << "epoch,mean_train_loss,auc,gauc,logloss\n";
  for (const auto& e : trace) {
    out << e.epoch << ',' << fmt(e.mean_train_loss) << ',' << fmt(e.eval.auc) << ','
        << fmt(e.eval.gauc) << ',' << fmt(e.eval.logloss) << '\n';
  }
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write to " + path.string());
  out << content;
}

// Fixed-slot job runner: results land by job index, so output ordering does
// not depend on scheduling.
void run_jobs(std::size_t n, int jobs, const std::function<void(std::size_t)>& work,
              std::vector<std::string>* errors) {
  errors->assign(n, std::string());
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        work(i);
      } catch (const std::exception& e) {
        (*errors)[i] = e.what();
      }
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          work(i);
        } catch (const std::exception& e) {
          (*errors)[i] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
}

void flush_table(const ExperimentConfig& config, const fs::path& dir,
                 const ResultsTable& table, bool with_long) {
  if (config.output.write_csv) {
    write_file(dir / "results.csv", table.to_csv());
    write_file(dir / "aggregates.csv", table.to_aggregate_csv());
    if (with_long) write_file(dir / "results_long.csv", table.to_long_csv());
  }
  if (config.output.write_text) write_file(dir / "results.txt", table.to_text());
}

}  // namespace

// --- commands ------------------------------------------------------------

void cmd_generate(const ExperimentConfig& config, const std::string& out_path,
                  bool force) {
  config.validate();
  if (!config.data.synthetic)
    throw ConfigError("generate: config has no synthetic data section");
  const fs::path dir(out_path);
  if (fs::exists(dir) && !force)
    throw ConfigError("generate: output path exists (use --force): " + out_path);
  fs::create_directories(dir);

  const LoadedData data = load_data(config.data);
  write_csv((dir / "train.csv").string(), data.train);
  write_csv((dir / "test.csv").string(), data.test);
  write_logits((dir / "logits_train.csv").string(), data.train);
  write_logits((dir / "logits_test.csv").string(), data.test);

  const double oracle_train = auc(data.train.true_logits, data.train.labels);
  const double oracle_test = auc(data.test.true_logits, data.test.labels);

  json manifest;
  manifest["command"] = "generate";
  manifest["version"] = kVersion;
  json syn;
  spec_to_json(syn, config.data.synthetic->spec);
  syn["rows_train"] = config.data.synthetic->rows_train;
  syn["rows_test"] = config.data.synthetic->rows_test;
  syn["seed"] = config.data.synthetic->seed;
  manifest["synthetic"] = syn;
  manifest["oracle_auc_train"] = oracle_train;
  manifest["oracle_auc_test"] = oracle_test;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "generated " << data.train.size() << " train rows, " << data.test.size()
            << " test rows in " << out_path << "\n"
            << "oracle auc: train " << fmt(oracle_train) << ", test " << fmt(oracle_test)
            << "\n";
}

fs::path cmd_train(const ExperimentConfig& config, std::optional<u64> seed_override,
                   const std::string& out_override) {
  config.validate();
  const u64 seed = seed_override ? *seed_override : config.training.seeds.front();
  const std::string base = out_override.empty() ? config.output.dir : out_override;
  const fs::path dir = make_run_dir(base, "train");
  write_manifest(dir, "train", config, {seed});

  const LoadedData data = load_data(config.data);
  RunOutput run = run_training(config, config.model, data, seed, "mgdin", "");

  save_checkpoint((dir / "checkpoint.mgdn").string(), run.model);
  write_trace_csv(dir / "trace.csv", run.trace);
  EvalReport final_eval;
  final_eval.auc = run.row.auc;
  final_eval.gauc = run.row.gauc;
  final_eval.logloss = run.row.logloss;
  final_eval.n_examples = data.test.size();
  final_eval.n_users_scored =
      data.test.has_user_ids() ? gauc_scored_users(data.test.labels, data.test.user_ids) : 0;
  final_eval.wall_time_sec = run.row.wall_time_sec;
  write_file(dir / "eval.txt", eval_report_text(final_eval));

  std::cout << "seed " << seed << ": auc " << fmt(run.row.auc) << ", gauc "
            << fmt(run.row.gauc) << ", logloss " << fmt(run.row.logloss) << " ("
            << fmt(run.row.wall_time_sec) << "s)\n"
            << "run directory: " << dir.string() << "\n";
  return dir;
}

EvalReport cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                    const std::string& out_override) {
  config.validate();
  if (!fs::exists(checkpoint_path))
    throw DataError("eval: checkpoint does not exist: " + checkpoint_path);
  Model model = load_checkpoint(checkpoint_path);
  const LoadedData data = load_data(config.data);
  const EvalReport report = evaluate(model, data.test, config.training.batch_size);

  const std::string base = out_override.empty() ? config.output.dir : out_override;
  const fs::path dir = make_run_dir(base, "eval");
  write_manifest(dir, "eval", config, {});
  write_file(dir / "eval.txt", eval_report_text(report));
  std::cout << eval_report_text(report) << "run directory: " << dir.string() << "\n";
  return report;
}

ResultsTable cmd_ablate(const ExperimentConfig& config, const std::string& out_override,
                        int jobs) {
  config.validate();
  const LoadedData data = load_data(config.data);
  const auto& variants = ablation_variants();
  const auto& seeds = config.training.seeds;

  const std::string base = out_override.empty() ? config.output.dir : out_override;
  const fs::path dir = make_run_dir(base, "ablate");
  write_manifest(dir, "ablate", config, seeds);

  const std::size_t n_runs = variants.size() * seeds.size();
  std::vector<std::optional<ResultRow>> slots(n_runs);
  std::vector<std::string> errors;
  run_jobs(
      n_runs, jobs,
      [&](std::size_t i) {
        const std::string& variant = variants[i / seeds.size()];
        const u64 seed = seeds[i % seeds.size()];
        const ModelConfig mc = variant_config(config.model, variant);
        slots[i] = run_training(config, mc, data, seed, variant, "").row;
      },
      &errors);

  ResultsTable table;
  for (const auto& slot : slots)
    if (slot) table.rows.push_back(*slot);
  flush_table(config, dir, table, false);
  std::cout << table.to_text() << "run directory: " << dir.string() << "\n";

  for (const auto& e : errors)
    if (!e.empty()) throw NumericError("ablate: run failed: " + e);
  return table;
}

ResultsTable cmd_sweep(const ExperimentConfig& config, const std::string& out_override,
                       int jobs) {
  config.validate();
  if (!config.sweep) throw ConfigError("sweep: config has no sweep section");
  const LoadedData data = load_data(config.data);
  const auto& seeds = config.training.seeds;

  struct Point {
    std::string axis;
    ModelConfig model;
  };
  std::vector<Point> points;
  if (config.sweep->axis == SweepAxis::GranularityCount) {
    for (i64 k : config.sweep->k_values) {
      ModelConfig mc = config.model;
      mc.granularities.assign(config.model.granularities.begin(),
                              config.model.granularities.begin() + k);
      points.push_back({"K=" + std::to_string(k), mc});
    }
  } else {
    for (const auto& schedule : config.sweep->ratio_schedules) {
      ModelConfig mc = config.model;
      mc.ratios = schedule;
      std::string label = "ratios=";
      for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (i) label += "/";
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%g", schedule[i]);
        label += buf;
      }
      points.push_back({label, mc});
    }
  }

  const std::string base = out_override.empty() ? config.output.dir : out_override;
  const fs::path dir = make_run_dir(base, "sweep");
  write_manifest(dir, "sweep", config, seeds);

  const std::size_t n_runs = points.size() * seeds.size();
  std::vector<std::optional<ResultRow>> slots(n_runs);
  std::vector<std::string> errors;
  run_jobs(
      n_runs, jobs,
      [&](std::size_t i) {
        const Point& point = points[i / seeds.size()];
        const u64 seed = seeds[i % seeds.size()];
        slots[i] = run_training(config, point.model, data, seed, "mgdin", point.axis).row;
      },
      &errors);

  ResultsTable table;
  for (const auto& slot : slots)
    if (slot) table.rows.push_back(*slot);
  flush_table(config, dir, table, true);
  std::cout << table.to_text() << "run directory: " << dir.string() << "\n";

  for (const auto& e : errors)
    if (!e.empty()) throw NumericError("sweep: run failed: " + e);
  return table;
}

// --- gradcheck -----------------------------------------------------------

GradcheckSetup default_gradcheck_setup(u64 seed) {
  FeatureSchema schema =
      FeatureSchema::with_default_names({1000, 1000, 10, 10, 4, 4, 2, 2});
  ModelConfig mc;
  mc.granularities = {1, 2};
  mc.layers = 3;
  mc.ratios = {0.33, 0.66, 1.0};
  mc.d_embed = 4;
  mc.d_model = 8;

  SyntheticSpec spec;
  spec.n_features = schema.n_features();
  spec.cardinalities = schema.cardinalities;
  spec.zipf_exponent = 1.1;
  spec.pairs = {{0, 2, 1.0}, {1, 3, 1.0}, {4, 5, 1.0}};
  spec.temperature = 1.0;
  spec.table_seed = seed;

  GradcheckSetup setup;
  setup.model = build_model(mc, schema, seed);
  const Dataset rows = generate_synthetic(spec, 4, hash_combine(seed, 3));
  setup.batch = rows.batch_range(0, 4);
  return setup;
}

GradcheckSetup gradcheck_setup_from_config(const ExperimentConfig& config, u64 seed) {
  config.validate();
  LoadedData data = load_data(config.data);
  GradcheckSetup setup;
  setup.model = build_model(config.model, data.train.schema, seed);
  const i64 rows = std::min<i64>(4, data.train.size());
  setup.batch = data.train.batch_range(0, rows);
  return setup;
}

GradCheckResult cmd_gradcheck(const std::optional<ExperimentConfig>& config, u64 seed,
                              std::ostream& out) {
  GradcheckSetup setup =
      config ? gradcheck_setup_from_config(*config, seed) : default_gradcheck_setup(seed);
  const GradCheckResult result = gradcheck_model(setup.model, setup.batch);
  out << std::left << std::setw(28) << "parameter group" << std::setw(10) << "scalars"
      << "max_rel_err\n";
  for (const auto& g : result.groups) {
    out << std::left << std::setw(28) << g.name << std::setw(10) << g.count;
    if (g.trainable) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3e", g.max_rel_err);
      out << buf << '\n';
    } else {
      out << (g.frozen_grad_zero ? "frozen (grad exactly zero)" : "frozen (NONZERO GRAD)")
          << '\n';
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", result.max_rel_err);
  out << "overall max relative error: " << buf << "\n";
  out << "frozen q0/k0 gradients exactly zero: "
      << (result.frozen_exact_zero ? "yes" : "NO") << "\n";
  if (result.max_rel_err >= 1e-4 || !result.frozen_exact_zero)
    throw NumericError("gradcheck: tolerance exceeded (max rel err " +
                       std::to_string(result.max_rel_err) + ")");
  return result;
}

}  // namespace mgdin
