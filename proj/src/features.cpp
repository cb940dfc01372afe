#include "mgdin/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mgdin/kernels.hpp"

namespace mgdin {

using i64 = std::int64_t;

void FeatureSchema::validate() const {
  if (cardinalities.empty()) throw ConfigError("schema: no features");
  if (names.size() != cardinalities.size())
    throw ConfigError("schema: names/cardinalities length mismatch");
  for (std::size_t j = 0; j < cardinalities.size(); ++j)
    if (cardinalities[j] < 1)
      throw ConfigError("schema: feature " + names[j] + " has cardinality " +
                        std::to_string(cardinalities[j]));
}

FeatureSchema FeatureSchema::with_default_names(std::vector<i64> cardinalities) {
  FeatureSchema s;
  s.cardinalities = std::move(cardinalities);
  s.names.reserve(s.cardinalities.size());
  for (std::size_t j = 0; j < s.cardinalities.size(); ++j)
    s.names.push_back("f_" + std::to_string(j));
  return s;
}

EmbeddingTable make_embedding_table(const FeatureSchema& schema, i64 d_embed, Rng& rng) {
  schema.validate();
  if (d_embed < 1) throw ConfigError("embedding: d_embed must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_embed));
  EmbeddingTable table;
  table.d_embed = d_embed;
  table.tables.reserve(schema.cardinalities.size());
  for (i64 card : schema.cardinalities) {
    std::vector<double> vals(static_cast<std::size_t>(card * d_embed));
    for (double& v : vals) v = rng.uniform(-bound, bound);
    table.tables.push_back(Tensor::param({card, d_embed}, std::move(vals)));
  }
  std::vector<double> null_vals(static_cast<std::size_t>(d_embed));
  for (double& v : null_vals) v = rng.uniform(-bound, bound);
  table.null_row = Tensor::param({d_embed}, std::move(null_vals));
  return table;
}

Tensor embed_batch(Tape* tape, const EmbeddingTable& table, const FeatureBatch& batch) {
  const i64 B = batch.batch_size, n = batch.n_features, e = table.d_embed;
  if (n != static_cast<i64>(table.tables.size()))
    throw DataError("embed_batch: batch has " + std::to_string(n) +
                    " features, table has " + std::to_string(table.tables.size()));
  for (i64 b = 0; b < B; ++b)
    for (i64 j = 0; j < n; ++j) {
      const i64 id = batch.id_at(b, j);
      const i64 card = table.tables[static_cast<std::size_t>(j)].dim(0);
      if (id < 0 || id >= card)
        throw DataError("embed_batch: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(card) + ") for feature " + std::to_string(j) +
                        " in row " + std::to_string(b));
    }

  Tensor out = Tensor::zeros({B, n, e});
  double* ov = out.values_mut().data();
  std::vector<const double*> table_vals(static_cast<std::size_t>(n));
  bool flows = false;
  for (i64 j = 0; j < n; ++j) {
    table_vals[static_cast<std::size_t>(j)] = table.tables[static_cast<std::size_t>(j)].values().data();
    flows = flows || table.tables[static_cast<std::size_t>(j)].requires_grad();
  }
  const i64* idp = batch.ids.data();
  kernels::parallel_for(B, n * e, [&](i64 b) {
    for (i64 j = 0; j < n; ++j) {
      const double* src = table_vals[static_cast<std::size_t>(j)] + idp[b * n + j] * e;
      std::copy(src, src + e, ov + (b * n + j) * e);
    }
  });
  if (!tape) return out;

  std::vector<std::shared_ptr<TensorStorage>> table_storages;
  table_storages.reserve(static_cast<std::size_t>(n));
  for (i64 j = 0; j < n; ++j)
    table_storages.push_back(table.tables[static_cast<std::size_t>(j)].storage());
  auto ids_copy = std::make_shared<std::vector<i64>>(batch.ids);
  auto os = out.storage();
  tape->record(out, flows, [table_storages, ids_copy, os, B, n, e]() {
    if (os->grad.empty()) return;
    const double* go = os->grad.data();
    const i64* idp = ids_copy->data();
    // Row collisions are possible, so accumulation is serial per feature.
    for (i64 j = 0; j < n; ++j) {
      auto& ts = *table_storages[static_cast<std::size_t>(j)];
      if (!ts.requires_grad) continue;
      if (ts.grad.empty()) ts.grad.assign(ts.values.size(), 0.0);
      double* gt = ts.grad.data();
      for (i64 b = 0; b < B; ++b) {
        const double* src = go + (b * n + j) * e;
        double* dst = gt + idp[b * n + j] * e;
        for (i64 k = 0; k < e; ++k) dst[k] += src[k];
      }
    }
  });
  return out;
}

FeatureBatch Dataset::batch_rows(std::span<const i64> rows) const {
  const i64 n = schema.n_features();
  FeatureBatch b;
  b.batch_size = static_cast<i64>(rows.size());
  b.n_features = n;
  b.ids.reserve(rows.size() * static_cast<std::size_t>(n));
  b.labels.reserve(rows.size());
  for (i64 r : rows) {
    const auto* src = ids.data() + r * n;
    b.ids.insert(b.ids.end(), src, src + n);
    b.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  return b;
}

FeatureBatch Dataset::batch_range(i64 begin, i64 end) const {
  const i64 n = schema.n_features();
  FeatureBatch b;
  b.batch_size = end - begin;
  b.n_features = n;
  b.ids.assign(ids.begin() + begin * n, ids.begin() + end * n);
  b.labels.assign(labels.begin() + begin, labels.begin() + end);
  return b;
}

void SyntheticSpec::validate() const {
  if (n_features < 1) throw ConfigError("synthetic: n_features must be positive");
  if (static_cast<i64>(cardinalities.size()) != n_features)
    throw ConfigError("synthetic: cardinalities length != n_features");
  for (i64 c : cardinalities)
    if (c < 1) throw ConfigError("synthetic: cardinalities must be positive");
  if (zipf_exponent < 0.0) throw ConfigError("synthetic: zipf_exponent must be >= 0");
  if (temperature < 0.0) throw ConfigError("synthetic: temperature must be >= 0");
  for (const auto& p : pairs) {
    if (p.a < 0 || p.a >= n_features || p.b < 0 || p.b >= n_features)
      throw ConfigError("synthetic: interaction pair references feature out of range");
  }
  if (user_feature >= n_features)
    throw ConfigError("synthetic: user_feature out of range");
}

double synthetic_pair_weight(const SyntheticSpec& spec, std::size_t pair_index,
                             i64 id_a, i64 id_b) {
  const auto& p = spec.pairs[pair_index];
  const std::uint64_t ka =
      hash_combine(hash_combine(spec.table_seed, 2 * pair_index), static_cast<std::uint64_t>(id_a));
  const std::uint64_t kb =
      hash_combine(hash_combine(spec.table_seed, 2 * pair_index + 1), static_cast<std::uint64_t>(id_b));
  const double ua = 2.0 * bits_to_unit_double(ka) - 1.0;
  const double ub = 2.0 * bits_to_unit_double(kb) - 1.0;
  return p.amplitude * ua * ub;
}

double synthetic_true_logit(const SyntheticSpec& spec, std::span<const i64> row_ids) {
  double logit = spec.bias;
  for (std::size_t k = 0; k < spec.pairs.size(); ++k) {
    const auto& p = spec.pairs[k];
    logit += synthetic_pair_weight(spec, k, row_ids[static_cast<std::size_t>(p.a)],
                                   row_ids[static_cast<std::size_t>(p.b)]);
  }
  return logit;
}

namespace {

// Cumulative distribution of p(i) proportional to (i+1)^-s over [0, card).
std::vector<double> zipf_cdf(i64 card, double s) {
  std::vector<double> cdf(static_cast<std::size_t>(card));
  double total = 0.0;
  for (i64 i = 0; i < card; ++i) {
    total += std::pow(static_cast<double>(i + 1), -s);
    cdf[static_cast<std::size_t>(i)] = total;
  }
  for (double& v : cdf) v /= total;
  cdf.back() = 1.0;
  return cdf;
}

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, i64 n_rows, std::uint64_t seed) {
  spec.validate();
  if (n_rows <= 0) throw ConfigError("synthetic: n_rows must be positive");
  const i64 n = spec.n_features;

  std::vector<std::vector<double>> cdfs;
  cdfs.reserve(static_cast<std::size_t>(n));
  for (i64 j = 0; j < n; ++j)
    cdfs.push_back(zipf_cdf(spec.cardinalities[static_cast<std::size_t>(j)], spec.zipf_exponent));

  Dataset data;
  data.schema = FeatureSchema::with_default_names(spec.cardinalities);
  data.ids.assign(static_cast<std::size_t>(n_rows * n), 0);
  data.labels.assign(static_cast<std::size_t>(n_rows), 0.0);
  data.true_logits.assign(static_cast<std::size_t>(n_rows), 0.0);
  if (spec.user_feature >= 0) data.user_ids.assign(static_cast<std::size_t>(n_rows), 0);

  kernels::parallel_for(n_rows, 4096, [&](i64 row) {
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(row)));
    i64* row_ids = data.ids.data() + row * n;
    for (i64 j = 0; j < n; ++j) {
      const auto& cdf = cdfs[static_cast<std::size_t>(j)];
      const double u = rng.next_double();
      row_ids[j] = static_cast<i64>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (row_ids[j] >= spec.cardinalities[static_cast<std::size_t>(j)])
        row_ids[j] = spec.cardinalities[static_cast<std::size_t>(j)] - 1;
    }
    const double logit = synthetic_true_logit(spec, {row_ids, static_cast<std::size_t>(n)});
    data.true_logits[static_cast<std::size_t>(row)] = logit;
    double label;
    if (spec.temperature == 0.0) {
      label = logit > 0.0 ? 1.0 : 0.0;
    } else {
      label = rng.next_double() < stable_sigmoid(logit / spec.temperature) ? 1.0 : 0.0;
    }
    data.labels[static_cast<std::size_t>(row)] = label;
    if (spec.user_feature >= 0)
      data.user_ids[static_cast<std::size_t>(row)] = row_ids[spec.user_feature];
  });
  return data;
}

std::int64_t hash_id_into(i64 raw, i64 feature_index, i64 cardinality) {
  const std::uint64_t h = splitmix64(splitmix64(static_cast<std::uint64_t>(raw)) ^
                                     splitmix64(0x9e37ULL + static_cast<std::uint64_t>(feature_index)));
  return static_cast<i64>(h % static_cast<std::uint64_t>(cardinality));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

i64 parse_int(const std::string& s, const std::string& path, std::size_t line_no,
              const std::string& what) {
  i64 v = 0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what +
                    " is not an integer: '" + s + "'");
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, const FeatureSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  const i64 n = schema.n_features();

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ":1: empty file");
  auto header = split_csv_line(line);
  const bool has_user = !header.empty() && header.back() == "user_id";
  const std::size_t expected = static_cast<std::size_t>(n) + 1 + (has_user ? 1 : 0);
  if (header.size() != expected)
    throw DataError(path + ":1: header has " + std::to_string(header.size()) +
                    " columns, expected " + std::to_string(expected));
  for (i64 j = 0; j < n; ++j)
    if (header[static_cast<std::size_t>(j)] != schema.names[static_cast<std::size_t>(j)])
      throw DataError(path + ":1: missing column '" + schema.names[static_cast<std::size_t>(j)] +
                      "' (found '" + header[static_cast<std::size_t>(j)] + "')");
  if (header[static_cast<std::size_t>(n)] != "label")
    throw DataError(path + ":1: missing column 'label'");

  Dataset data;
  data.schema = schema;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
    for (i64 j = 0; j < n; ++j) {
      i64 id = parse_int(fields[static_cast<std::size_t>(j)], path, line_no,
                         "id for " + schema.names[static_cast<std::size_t>(j)]);
      if (id < 0)
        throw DataError(path + ":" + std::to_string(line_no) + ": negative id for " +
                        schema.names[static_cast<std::size_t>(j)]);
      const i64 card = schema.cardinalities[static_cast<std::size_t>(j)];
      if (id >= card) id = hash_id_into(id, j, card);
      data.ids.push_back(id);
    }
    const i64 label = parse_int(fields[static_cast<std::size_t>(n)], path, line_no, "label");
    if (label != 0 && label != 1)
      throw DataError(path + ":" + std::to_string(line_no) + ": label outside {0,1}: " +
                      std::to_string(label));
    data.labels.push_back(static_cast<double>(label));
    if (has_user)
      data.user_ids.push_back(parse_int(fields[static_cast<std::size_t>(n) + 1], path,
                                        line_no, "user_id"));
  }
  return data;
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_csv: cannot open " + path);
  const i64 n = data.schema.n_features();
  for (i64 j = 0; j < n; ++j) {
    if (j) out << ',';
    out << data.schema.names[static_cast<std::size_t>(j)];
  }
  out << ",label";
  if (data.has_user_ids()) out << ",user_id";
  out << '\n';
  for (i64 r = 0; r < data.size(); ++r) {
    for (i64 j = 0; j < n; ++j) {
      if (j) out << ',';
      out << data.ids[static_cast<std::size_t>(r * n + j)];
    }
    out << ',' << static_cast<i64>(data.labels[static_cast<std::size_t>(r)]);
    if (data.has_user_ids()) out << ',' << data.user_ids[static_cast<std::size_t>(r)];
    out << '\n';
  }
  if (!out) throw DataError("write_csv: write failed for " + path);
}

void write_logits(const std::string& path, const Dataset& data) {
  if (!data.has_true_logits())
    throw DataError("write_logits: dataset has no stored true logits");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_logits: cannot open " + path);
  out << "true_logit\n";
  char buf[64];
  for (double v : data.true_logits) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << '\n';
  }
  if (!out) throw DataError("write_logits: write failed for " + path);
}

std::vector<double> read_logits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_logits: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || (line != "true_logit" && line != "true_logit\r"))
    throw DataError(path + ":1: expected header 'true_logit'");
  std::vector<double> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": not a number: '" + line + "'");
    }
  }
  return out;
}

}  // namespace mgdin
