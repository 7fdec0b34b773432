#include "fisherscope/model.hpp"

#include <cmath>
#include <numeric>

#include "fisherscope/error.hpp"
#include "fisherscope/hash.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::mlp ? "mlp" : "transformer_encoder";
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::regression: return "regression";
    case TaskKind::language_modeling: return "language_modeling";
  }
  return "classification";
}

std::string_view to_string(Activation act) { return act == Activation::relu ? "relu" : "gelu"; }

ModelKind parse_model_kind(std::string_view text) {
  if (text == "mlp") return ModelKind::mlp;
  if (text == "transformer_encoder" || text == "transformer") return ModelKind::transformer_encoder;
  throw InvalidArgument("unknown model kind '" + std::string(text) + "'");
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "classification") return TaskKind::classification;
  if (text == "regression") return TaskKind::regression;
  if (text == "language_modeling") return TaskKind::language_modeling;
  throw InvalidArgument("unknown task kind '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "gelu") return Activation::gelu;
  throw InvalidArgument("unknown activation '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("invalid model config: " + what); };
  if (depth == 0) fail("depth must be positive");
  if (width == 0) fail("width must be positive");
  if (output_dim == 0) fail("output_dim must be positive");
  if (kind == ModelKind::mlp) {
    if (input_dim == 0) fail("mlp input_dim must be positive");
    if (task == TaskKind::language_modeling) fail("language modeling needs a transformer_encoder");
  } else {
    if (heads == 0 || width % heads != 0) fail("width must be divisible by heads");
    if (vocab_size == 0) fail("transformer vocab_size must be positive");
    if (max_seq_len == 0) fail("transformer max_seq_len must be positive");
  }
  if (task == TaskKind::classification && output_dim < 2) fail("classification needs output_dim >= 2");
  if (dropout_sites().size() < 2) fail("at least two dropout sites are required (mlp depth >= 2)");
}

std::vector<std::string> ModelConfig::dropout_sites() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < depth; ++i) {
    if (kind == ModelKind::mlp) {
      out.push_back("hidden" + std::to_string(i) + ".dropout");
    } else {
      out.push_back("block" + std::to_string(i) + ".attn.dropout");
      out.push_back("block" + std::to_string(i) + ".ffn.dropout");
    }
  }
  return out;
}

namespace {

struct ParamSpec {
  std::string name;
  LayerId layer;
  ParamRole role;
  Shape shape;
};

struct Layout {
  std::vector<ParamSpec> params;
  std::vector<LayerInfo> layers;
  std::vector<DropoutSite> sites;
  LayerId head = 0;
};

// Parameter and layer ids follow architectural order. model_outputs relies
// on the same arithmetic (see the index helpers below).
Layout make_layout(const ModelConfig& c) {
  Layout l;
  auto layer = [&l](std::string name) {
    l.layers.push_back({static_cast<LayerId>(l.layers.size()), std::move(name)});
    return l.layers.back().id;
  };
  auto param = [&l](const std::string& layer_name, LayerId id, const char* suffix, ParamRole role, Shape shape) {
    l.params.push_back({layer_name + "." + suffix, id, role, std::move(shape)});
  };
  auto site = [&l](std::string name, LayerId owner) {
    l.sites.push_back({static_cast<std::uint32_t>(l.sites.size()), std::move(name), owner});
  };
  const std::size_t d = c.width;
  if (c.kind == ModelKind::mlp) {
    std::size_t in = c.input_dim;
    for (std::size_t i = 0; i < c.depth; ++i) {
      const std::string name = "hidden" + std::to_string(i);
      const LayerId id = layer(name);
      param(name, id, "weight", ParamRole::weight, {d, in});
      param(name, id, "bias", ParamRole::bias, {d});
      site(name + ".dropout", id);
      in = d;
    }
  } else {
    const LayerId emb = layer("embed");
    param("embed", emb, "token", ParamRole::embedding, {c.vocab_size, d});
    param("embed", emb, "position", ParamRole::embedding, {c.max_seq_len, d});
    for (std::size_t b = 0; b < c.depth; ++b) {
      const std::string blk = "block" + std::to_string(b);
      const LayerId n1 = layer(blk + ".norm1");
      param(blk + ".norm1", n1, "scale", ParamRole::norm_scale, {d});
      param(blk + ".norm1", n1, "shift", ParamRole::norm_shift, {d});
      const LayerId attn = layer(blk + ".attn");
      for (const char* proj : {"q", "k", "v", "o"}) {
        param(blk + ".attn", attn, (std::string("w") + proj).c_str(), ParamRole::weight, {d, d});
        param(blk + ".attn", attn, (std::string("b") + proj).c_str(), ParamRole::bias, {d});
      }
      const LayerId n2 = layer(blk + ".norm2");
      param(blk + ".norm2", n2, "scale", ParamRole::norm_scale, {d});
      param(blk + ".norm2", n2, "shift", ParamRole::norm_shift, {d});
      const LayerId ffn = layer(blk + ".ffn");
      param(blk + ".ffn", ffn, "w1", ParamRole::weight, {2 * d, d});
      param(blk + ".ffn", ffn, "b1", ParamRole::bias, {2 * d});
      param(blk + ".ffn", ffn, "w2", ParamRole::weight, {d, 2 * d});
      param(blk + ".ffn", ffn, "b2", ParamRole::bias, {d});
      site(blk + ".attn.dropout", attn);
      site(blk + ".ffn.dropout", ffn);
    }
    const LayerId fn = layer("final_norm");
    param("final_norm", fn, "scale", ParamRole::norm_scale, {d});
    param("final_norm", fn, "shift", ParamRole::norm_shift, {d});
  }
  l.head = layer("head");
  param("head", l.head, "weight", ParamRole::weight, {c.output_dim, d});
  param("head", l.head, "bias", ParamRole::bias, {c.output_dim});
  return l;
}

constexpr ParamId kBlockParams = 16;
ParamId block_base(std::size_t b) { return static_cast<ParamId>(2 + kBlockParams * b); }

Var activate(Graph& g, Var x, Activation act) { return act == Activation::relu ? g.relu(x) : g.gelu(x); }

Var mlp_outputs(const ModelConfig& c, Graph& g, Batch batch) {
  g.set_scope("input");
  std::vector<double> flat;
  flat.reserve(batch.size() * c.input_dim);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].features.size() != c.input_dim)
      throw ShapeError("input", "sample " + std::to_string(s) + " has " +
                                    std::to_string(batch[s].features.size()) + " features, expected " +
                                    std::to_string(c.input_dim));
    flat.insert(flat.end(), batch[s].features.begin(), batch[s].features.end());
  }
  Var h = g.constant(Tensor({batch.size(), c.input_dim}, std::move(flat)));
  for (std::size_t i = 0; i < c.depth; ++i) {
    g.set_scope("hidden" + std::to_string(i));
    const auto w = static_cast<ParamId>(2 * i);
    h = activate(g, g.linear(h, g.param(w), g.param(w + 1)), c.activation);
    h = g.site(h, static_cast<std::uint32_t>(i));
  }
  g.set_scope("head");
  const auto hw = static_cast<ParamId>(2 * c.depth);
  return g.linear(h, g.param(hw), g.param(hw + 1));
}

Var transformer_sequence(const ModelConfig& c, Graph& g, const Sample& sample, std::size_t slot) {
  const auto& tokens = sample.tokens;
  g.set_scope("embed");
  if (tokens.empty() || tokens.size() > c.max_seq_len)
    throw ShapeError("embed", "sequence of length " + std::to_string(tokens.size()) +
                                  " (max_seq_len " + std::to_string(c.max_seq_len) + ")");
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = g.add(g.embedding(g.param(0), tokens), g.embedding(g.param(1), positions));
  for (std::size_t b = 0; b < c.depth; ++b) {
    const ParamId base = block_base(b);
    const std::string blk = "block" + std::to_string(b);
    g.set_scope(blk + ".norm1");
    Var a = g.layer_norm(x, g.param(base), g.param(base + 1));
    g.set_scope(blk + ".attn");
    Var q = g.linear(a, g.param(base + 2), g.param(base + 3));
    Var k = g.linear(a, g.param(base + 4), g.param(base + 5));
    Var v = g.linear(a, g.param(base + 6), g.param(base + 7));
    Var o = g.linear(g.attention(q, k, v, c.heads), g.param(base + 8), g.param(base + 9));
    o = g.site(o, static_cast<std::uint32_t>(2 * b), slot);
    x = g.add(x, o);
    g.set_scope(blk + ".norm2");
    Var n = g.layer_norm(x, g.param(base + 10), g.param(base + 11));
    g.set_scope(blk + ".ffn");
    Var f = g.linear(g.gelu(g.linear(n, g.param(base + 12), g.param(base + 13))), g.param(base + 14),
                     g.param(base + 15));
    f = g.site(f, static_cast<std::uint32_t>(2 * b + 1), slot);
    x = g.add(x, f);
  }
  const ParamId tail = block_base(c.depth);
  g.set_scope("final_norm");
  x = g.layer_norm(x, g.param(tail), g.param(tail + 1));
  g.set_scope("head");
  return g.linear(g.mean_rows(x), g.param(tail + 2), g.param(tail + 3));
}

Var transformer_outputs(const ModelConfig& c, Graph& g, Batch batch) {
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    g.set_sample(static_cast<std::ptrdiff_t>(s));
    rows.push_back(transformer_sequence(c, g, batch[s], s));
  }
  g.set_sample(-1);
  return rows.size() == 1 ? rows.front() : g.concat_rows(rows);
}

}  // namespace

Var model_outputs(const ModelConfig& config, Graph& graph, Batch batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  return config.kind == ModelKind::mlp ? mlp_outputs(config, graph, batch)
                                       : transformer_outputs(config, graph, batch);
}

Model::Model(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  Layout layout = make_layout(config_);
  if (layout.params.size() != params_.count())
    throw ShapeDisagreement("config implies " + std::to_string(layout.params.size()) +
                            " parameters, found " + std::to_string(params_.count()));
  for (std::size_t i = 0; i < layout.params.size(); ++i) {
    const auto& spec = layout.params[i];
    const auto& p = params_[static_cast<ParamId>(i)];
    if (p.name != spec.name || p.layer != spec.layer || p.role != spec.role)
      throw ShapeDisagreement("parameter " + std::to_string(i) + " is '" + p.name + "', config implies '" +
                              spec.name + "'");
    if (p.tensor.shape() != spec.shape)
      throw ShapeDisagreement("parameter '" + p.name + "' has shape " + shape_string(p.tensor.shape()) +
                              " but config implies " + shape_string(spec.shape));
  }
  layers_ = std::move(layout.layers);
  sites_ = std::move(layout.sites);
  head_layer_ = layout.head;
}

ForwardFn Model::forward(Objective objective) const {
  return [config = config_, objective](Graph& g, Batch batch) {
    Var out = model_outputs(config, g, batch);
    g.set_scope("loss");
    if (config.task == TaskKind::regression) {
      std::vector<double> target;
      target.reserve(batch.size() * config.output_dim);
      for (const auto& s : batch) {
        if (s.target.size() != config.output_dim)
          throw ShapeError("loss", "regression target of size " + std::to_string(s.target.size()) +
                                       ", expected " + std::to_string(config.output_dim));
        target.insert(target.end(), s.target.begin(), s.target.end());
      }
      const double factor = objective == Objective::training_loss
                                ? 1.0 / static_cast<double>(config.output_dim)
                                : 0.5;
      return g.squared_error(out, Tensor({batch.size(), config.output_dim}, std::move(target)), factor);
    }
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const auto& s : batch) labels.push_back(s.label);
    return g.cross_entropy(out, labels);
  };
}

Tensor Model::predict(Batch batch, const ParameterSet& params) const {
  Graph g(params, EvalOptions{});
  return g.value(model_outputs(config_, g, batch));
}

std::string Model::fingerprint() const {
  Digest d;
  d.text(to_string(config_.kind)).text(to_string(config_.task)).text(to_string(config_.activation));
  for (std::size_t v : {config_.depth, config_.width, config_.input_dim, config_.output_dim, config_.heads,
                        config_.vocab_size, config_.max_seq_len})
    d.update(static_cast<std::uint64_t>(v));
  for (const auto& p : params_.all()) {
    d.text(p.name);
    for (std::size_t e : p.tensor.shape()) d.update(static_cast<std::uint64_t>(e));
    d.update(p.tensor.values());
  }
  return d.hex();
}

Model build_model(const ModelConfig& config, std::uint64_t init_seed) {
  config.validate();
  Layout layout = make_layout(config);
  std::vector<Parameter> params;
  params.reserve(layout.params.size());
  for (std::size_t i = 0; i < layout.params.size(); ++i) {
    auto& spec = layout.params[i];
    Tensor t(spec.shape);
    Rng rng(derive_seed(init_seed, stream_id("init"), i));
    switch (spec.role) {
      case ParamRole::weight: {
        const double fan_in = static_cast<double>(spec.shape.back());
        const double bound = std::sqrt(6.0 / fan_in);
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamRole::embedding:
        for (double& v : t.values()) v = rng.normal(0.0, 0.02);
        break;
      case ParamRole::norm_scale:
        t.fill(1.0);
        break;
      case ParamRole::bias:
      case ParamRole::norm_shift:
        break;
    }
    params.push_back({static_cast<ParamId>(i), std::move(spec.name), spec.layer, spec.role, std::move(t)});
  }
  return Model(config, ParameterSet(std::move(params)));
}

Model init_output_head(Model model, std::uint64_t head_seed) {
  ParameterSet& ps = model.mutable_params();
  Rng rng(derive_seed(head_seed, stream_id("head")));
  for (const auto& p : model.params().all()) {
    if (p.layer != model.head_layer()) continue;
    Tensor& t = ps.mutable_tensor(p.id);
    if (p.role == ParamRole::weight)
      for (double& v : t.values()) v = rng.normal(0.0, 0.02);
    else
      t.fill(0.0);
  }
  return model;
}

}  // namespace fisherscope
