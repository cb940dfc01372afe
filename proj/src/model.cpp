#include "mgdin/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace mgdin {

using i64 = std::int64_t;
using json = nlohmann::json;

namespace {

std::string pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Mean: return "mean";
    case Pooling::Sum: return "sum";
    case Pooling::Max: return "max";
  }
  return "mean";
}

Pooling pooling_from(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "sum") return Pooling::Sum;
  if (s == "max") return Pooling::Max;
  throw ConfigError("model: unknown pooling '" + s + "' (mean|sum|max)");
}

std::string score_norm_name(ScoreNorm s) {
  return s == ScoreNorm::None ? "none" : "masked_softmax";
}

ScoreNorm score_norm_from(const std::string& s) {
  if (s == "none") return ScoreNorm::None;
  if (s == "masked_softmax") return ScoreNorm::MaskedSoftmax;
  throw ConfigError("model: unknown score_normalization '" + s + "' (none|masked_softmax)");
}

std::string topk_scope_name(TopkScope s) {
  return s == TopkScope::Global ? "global" : "per_row";
}

TopkScope topk_scope_from(const std::string& s) {
  if (s == "global") return TopkScope::Global;
  if (s == "per_row") return TopkScope::PerRow;
  throw ConfigError("model: unknown topk_scope '" + s + "' (global|per_row)");
}

std::string combine_name(GroupCombine c) {
  return c == GroupCombine::Concat ? "concat" : "sum";
}

GroupCombine combine_from(const std::string& s) {
  if (s == "concat") return GroupCombine::Concat;
  if (s == "sum") return GroupCombine::SumPool;
  throw ConfigError("model: unknown group_combine '" + s + "' (concat|sum)");
}

Tensor affine_weight(i64 fan_in, i64 fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> vals(static_cast<std::size_t>(fan_in * fan_out));
  for (double& v : vals) v = rng.uniform(-bound, bound);
  return Tensor::param({fan_in, fan_out}, std::move(vals));
}

}  // namespace

void ModelConfig::validate(i64 n_features) const {
  if (granularities.empty()) throw ConfigError("model: granularities must be non-empty");
  for (i64 g : granularities) {
    if (g < 1) throw ConfigError("model: granularities must be positive");
    if (g > n_features)
      throw ConfigError("model: granularity " + std::to_string(g) +
                        " exceeds feature count " + std::to_string(n_features));
  }
  if (without_mg && granularities.size() != 1)
    throw ConfigError("model: without_mg requires exactly one granularity, got " +
                      std::to_string(granularities.size()));
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (d_embed < 1 || d_model < 1) throw ConfigError("model: d_embed and d_model must be positive");
  if (d_ff < 0) throw ConfigError("model: d_ff must be >= 0 (0 selects the default)");
  for (i64 h : head_hidden)
    if (h < 1) throw ConfigError("model: head widths must be positive");
  if (!ratios.empty() && !without_di) validate_ratios(ratios, layers);
  if (!feature_order.empty()) {
    if (static_cast<i64>(feature_order.size()) != n_features)
      throw ConfigError("model: feature_order length != n_features");
    std::vector<bool> seen(static_cast<std::size_t>(n_features), false);
    for (i64 idx : feature_order) {
      if (idx < 0 || idx >= n_features || seen[static_cast<std::size_t>(idx)])
        throw ConfigError("model: feature_order is not a permutation");
      seen[static_cast<std::size_t>(idx)] = true;
    }
  }
  if (!(ln_eps > 0.0)) throw ConfigError("model: ln_eps must be positive");
  if (!(prediction_clamp > 0.0 && prediction_clamp < 0.5))
    throw ConfigError("model: prediction_clamp must lie in (0, 0.5)");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  c.d_ff = effective_d_ff();
  if (c.without_di) {
    c.ratios.assign(static_cast<std::size_t>(c.layers), 1.0);
  } else if (c.ratios.empty()) {
    c.ratios = default_ratios(c.layers);
  }
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"granularities", c.granularities},
           {"layers", c.layers},
           {"ratios", c.ratios},
           {"d_embed", c.d_embed},
           {"d_model", c.d_model},
           {"d_ff", c.d_ff},
           {"head_hidden", c.head_hidden},
           {"pooling", pooling_name(c.pooling)},
           {"without_mg", c.without_mg},
           {"without_di", c.without_di},
           {"score_normalization", score_norm_name(c.score_norm)},
           {"topk_scope", topk_scope_name(c.topk_scope)},
           {"group_combine", combine_name(c.group_combine)},
           {"tie_q0", c.tie_q0},
           {"feature_order", c.feature_order},
           {"ln_eps", c.ln_eps},
           {"prediction_clamp", c.prediction_clamp}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.granularities = j.value("granularities", d.granularities);
  c.layers = j.value("layers", d.layers);
  c.ratios = j.value("ratios", d.ratios);
  c.d_embed = j.value("d_embed", d.d_embed);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.pooling = pooling_from(j.value("pooling", std::string("mean")));
  c.without_mg = j.value("without_mg", d.without_mg);
  c.without_di = j.value("without_di", d.without_di);
  c.score_norm = score_norm_from(j.value("score_normalization", std::string("none")));
  c.topk_scope = topk_scope_from(j.value("topk_scope", std::string("global")));
  c.group_combine = combine_from(j.value("group_combine", std::string("concat")));
  c.tie_q0 = j.value("tie_q0", d.tie_q0);
  c.feature_order = j.value("feature_order", d.feature_order);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.prediction_clamp = j.value("prediction_clamp", d.prediction_clamp);
}

Model build_model(const ModelConfig& config, const FeatureSchema& schema,
                  std::uint64_t seed) {
  schema.validate();
  config.validate(schema.n_features());

  Model model;
  model.config = config.resolved();
  model.schema = schema;
  model.seed = seed;

  Rng rng(seed);
  const i64 n = schema.n_features();
  const i64 d_embed = model.config.d_embed;
  const i64 d_model = model.config.d_model;
  const i64 d_ff = model.config.d_ff;

  model.params.embeddings = make_embedding_table(schema, d_embed, rng);

  for (std::size_t h = 0; h < model.config.granularities.size(); ++h) {
    const i64 g = model.config.granularities[h];
    WindowParams wp;
    wp.granularity = g;
    const i64 token_width =
        model.config.group_combine == GroupCombine::Concat ? g * d_embed : d_embed;
    wp.in_w = affine_weight(token_width, d_model, rng);
    wp.in_b = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    // Always drawn, so the rest of the stream is identical whether or not
    // they end up tied to layer 1.
    wp.q0 = affine_weight(d_model, d_model, rng);
    wp.k0 = affine_weight(d_model, d_model, rng);
    wp.q0.set_requires_grad(false);
    wp.k0.set_requires_grad(false);
    for (i64 l = 0; l < model.config.layers; ++l) {
      LayerParams lp;
      lp.q = affine_weight(d_model, d_model, rng);
      lp.k = affine_weight(d_model, d_model, rng);
      lp.v = affine_weight(d_model, d_model, rng);
      lp.ffn_w1 = affine_weight(d_model, d_ff, rng);
      lp.ffn_b1 = Tensor::param({d_ff}, std::vector<double>(static_cast<std::size_t>(d_ff), 0.0));
      lp.ffn_w2 = affine_weight(d_ff, d_model, rng);
      lp.ffn_b2 = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
      lp.ln1_gain = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 1.0));
      lp.ln1_bias = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
      lp.ln2_gain = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 1.0));
      lp.ln2_bias = Tensor::param({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
      wp.layers.push_back(std::move(lp));
    }
    if (model.config.tie_q0) {
      wp.q0 = wp.layers[0].q;
      wp.k0 = wp.layers[0].k;
    }
    model.params.windows.push_back(std::move(wp));
  }

  const i64 pooled_width = static_cast<i64>(model.config.granularities.size()) * d_model;
  i64 in_width = pooled_width;
  for (i64 hdim : model.config.head_hidden) {
    HeadLayer hl;
    hl.w = affine_weight(in_width, hdim, rng);
    hl.b = Tensor::param({hdim}, std::vector<double>(static_cast<std::size_t>(hdim), 0.0));
    model.params.head.push_back(std::move(hl));
    in_width = hdim;
  }
  HeadLayer final_layer;
  final_layer.w = affine_weight(in_width, 1, rng);
  final_layer.b = Tensor::param({1}, {0.0});
  model.params.head.push_back(std::move(final_layer));

  (void)n;
  return model;
}

std::vector<NamedParam> flat_params(const Model& model) {
  std::vector<NamedParam> out;
  const auto& p = model.params;
  for (std::size_t j = 0; j < p.embeddings.tables.size(); ++j)
    out.push_back({"embed." + model.schema.names[j], p.embeddings.tables[j], true});
  out.push_back({"embed.null", p.embeddings.null_row, true});
  for (std::size_t h = 0; h < p.windows.size(); ++h) {
    const auto& w = p.windows[h];
    const std::string prefix = "win" + std::to_string(h) + ".";
    out.push_back({prefix + "in_proj.w", w.in_w, true});
    out.push_back({prefix + "in_proj.b", w.in_b, true});
    if (!model.config.tie_q0) {
      out.push_back({prefix + "q0", w.q0, false});
      out.push_back({prefix + "k0", w.k0, false});
    }
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const auto& lp = w.layers[l];
      const std::string lprefix = prefix + "l" + std::to_string(l + 1) + ".";
      out.push_back({lprefix + "q", lp.q, true});
      out.push_back({lprefix + "k", lp.k, true});
      out.push_back({lprefix + "v", lp.v, true});
      out.push_back({lprefix + "ffn.w1", lp.ffn_w1, true});
      out.push_back({lprefix + "ffn.b1", lp.ffn_b1, true});
      out.push_back({lprefix + "ffn.w2", lp.ffn_w2, true});
      out.push_back({lprefix + "ffn.b2", lp.ffn_b2, true});
      out.push_back({lprefix + "ln1.gain", lp.ln1_gain, true});
      out.push_back({lprefix + "ln1.bias", lp.ln1_bias, true});
      out.push_back({lprefix + "ln2.gain", lp.ln2_gain, true});
      out.push_back({lprefix + "ln2.bias", lp.ln2_bias, true});
    }
  }
  for (std::size_t i = 0; i < p.head.size(); ++i) {
    const std::string prefix = "head." + std::to_string(i) + ".";
    out.push_back({prefix + "w", p.head[i].w, true});
    out.push_back({prefix + "b", p.head[i].b, true});
  }
  return out;
}

std::int64_t parameter_count(const Model& model) {
  i64 total = 0;
  for (const auto& np : flat_params(model)) total += np.tensor.numel();
  return total;
}

Tensor forward(Tape* tape, const Model& model, const FeatureBatch& batch,
               ForwardArtifacts* artifacts) {
  if (batch.n_features != model.schema.n_features())
    throw DataError("forward: batch has " + std::to_string(batch.n_features) +
                    " features, schema expects " + std::to_string(model.schema.n_features()));
  const auto& cfg = model.config;

  Tensor embedded = embed_batch(tape, model.params.embeddings, batch);
  if (!cfg.feature_order.empty())
    embedded = permute_rows(tape, embedded, cfg.feature_order);

  std::vector<Tensor> pooled;
  pooled.reserve(model.params.windows.size());
  for (std::size_t h = 0; h < model.params.windows.size(); ++h) {
    const auto& wp = model.params.windows[h];
    GroupedRepresentation grouped =
        partition(tape, embedded, static_cast<i64>(h), wp.granularity,
                  model.params.embeddings.null_row, cfg.group_combine);
    GroupedRepresentation x0 = input_project(tape, grouped, wp.in_w, wp.in_b);

    const Tensor a0 = score_layer0(x0, wp.q0, wp.k0);
    MaskSchedule sched = build_masks(a0, cfg.layers, cfg.ratios, cfg.topk_scope);
    if (artifacts) {
      artifacts->layer0_scores.push_back(a0);
      artifacts->mask_schedules.push_back(sched);
    }

    Tensor x = x0.tokens;
    for (i64 l = 0; l < cfg.layers; ++l) {
      const auto& lp = wp.layers[static_cast<std::size_t>(l)];
      const Tensor z = masked_attention(tape, x, lp, sched.masks[static_cast<std::size_t>(l)],
                                        cfg.score_norm);
      x = block(tape, x, z, lp, cfg.ln_eps);
    }
    pooled.push_back(pool_tokens(tape, x, cfg.pooling));
  }

  Tensor h = pooled.size() == 1 ? pooled[0] : concat_cols(tape, pooled);
  for (std::size_t i = 0; i + 1 < model.params.head.size(); ++i) {
    const auto& hl = model.params.head[i];
    h = relu(tape, add(tape, matmul(tape, h, hl.w), hl.b));
  }
  const auto& out_layer = model.params.head.back();
  Tensor logit = add(tape, matmul(tape, h, out_layer.w), out_layer.b);
  Tensor prob = clamp(tape, sigmoid(tape, logit), cfg.prediction_clamp,
                      1.0 - cfg.prediction_clamp);
  return reshape(tape, prob, {batch.batch_size});
}

Tensor labels_tensor(const FeatureBatch& batch) {
  return Tensor::from_values({batch.batch_size}, batch.labels);
}

Tensor loss(Tape* tape, const Tensor& y_hat, const Tensor& labels, double clamp_eps) {
  if (y_hat.shape() != labels.shape())
    throw ShapeError("loss: prediction shape " + shape_str(y_hat.shape()) +
                     " != label shape " + shape_str(labels.shape()));
  const Tensor p = clamp(tape, y_hat, clamp_eps, 1.0 - clamp_eps);
  const Tensor ones = Tensor::full(labels.shape(), 1.0);
  const Tensor pos = mul(tape, labels, log(tape, p));
  const Tensor neg = mul(tape, sub(tape, ones, labels), log(tape, sub(tape, ones, p)));
  return scale(tape, mean_all(tape, add(tape, pos, neg)), -1.0);
}

std::vector<double> predict(const Model& model, const FeatureBatch& batch) {
  const Tensor y = forward(nullptr, model, batch);
  return std::vector<double>(y.values().begin(), y.values().end());
}

// --- checkpoint --------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'M', 'G', 'D', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  const auto params = flat_params(model);

  json header;
  header["format_version"] = kCheckpointVersion;
  header["seed"] = model.seed;
  header["config"] = model.config;
  header["schema"] = {{"names", model.schema.names},
                      {"cardinalities", model.schema.cardinalities}};
  json tensors = json::array();
  i64 offset = 0;
  for (const auto& np : params) {
    tensors.push_back({{"name", np.name},
                       {"shape", np.tensor.shape()},
                       {"offset", offset},
                       {"count", np.tensor.numel()},
                       {"trainable", np.trainable}});
    offset += np.tensor.numel();
  }
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  std::vector<float> buf;
  for (const auto& np : params) {
    const auto vals = np.tensor.values();
    buf.resize(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) buf[i] = static_cast<float>(vals[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("load_checkpoint: " + path + " is not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion)
    throw DataError("load_checkpoint: unsupported format version " + std::to_string(version));
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("load_checkpoint: truncated header in " + path);

  json header = json::parse(header_str, nullptr, false);
  if (header.is_discarded())
    throw DataError("load_checkpoint: corrupt header in " + path);

  ModelConfig config = header.at("config").get<ModelConfig>();
  FeatureSchema schema;
  schema.names = header.at("schema").at("names").get<std::vector<std::string>>();
  schema.cardinalities = header.at("schema").at("cardinalities").get<std::vector<i64>>();
  const std::uint64_t seed = header.at("seed").get<std::uint64_t>();

  Model model = build_model(config, schema, seed);
  std::unordered_map<std::string, Tensor> by_name;
  for (auto& np : flat_params(model)) by_name.emplace(np.name, np.tensor);

  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const i64 count = t.at("count").get<i64>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("load_checkpoint: unknown tensor '" + name + "' in " + path);
    if (it->second.numel() != count)
      throw DataError("load_checkpoint: size mismatch for tensor '" + name + "'");
    std::vector<float> buf(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError("load_checkpoint: truncated payload in " + path);
    auto dst = it->second.values_mut();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<double>(buf[i]);
  }
  return model;
}

}  // namespace mgdin
