#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fisherscope/autodiff.hpp"
#include "fisherscope/parameter.hpp"

namespace fisherscope {

enum class ModelKind { mlp, transformer_encoder };
enum class TaskKind { classification, regression, language_modeling };
enum class Activation { relu, gelu };

std::string_view to_string(ModelKind kind);
std::string_view to_string(TaskKind kind);
std::string_view to_string(Activation act);
ModelKind parse_model_kind(std::string_view text);
TaskKind parse_task_kind(std::string_view text);
Activation parse_activation(std::string_view text);

struct ModelConfig {
  ModelKind kind = ModelKind::mlp;
  TaskKind task = TaskKind::classification;
  /// MLP hidden layers or transformer blocks.
  std::size_t depth = 2;
  std::size_t width = 16;
  /// MLP only: width of the dense input.
  std::size_t input_dim = 0;
  std::size_t output_dim = 2;
  Activation activation = Activation::relu;
  // Transformer only.
  std::size_t heads = 1;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;

  /// Throws InvalidArgument listing the first violated invariant.
  void validate() const;
  /// Dropout-site names in architectural order.
  std::vector<std::string> dropout_sites() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerInfo {
  LayerId id = 0;
  std::string name;
};

struct DropoutSite {
  std::uint32_t id = 0;
  std::string name;
  LayerId layer = 0;
};

/// What the forward pass returns as its scalar.
enum class Objective {
  /// Mean training loss (cross-entropy, or per-output mean squared error).
  training_loss,
  /// Mean negative log-likelihood; unit-variance Gaussian for regression.
  negative_log_likelihood,
};

class Model {
 public:
  Model(ModelConfig config, ParameterSet params);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& mutable_params() noexcept { return params_; }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  const std::vector<DropoutSite>& sites() const noexcept { return sites_; }
  LayerId head_layer() const noexcept { return head_layer_; }

  /// Loss closure over this model's architecture. It reads parameters from
  /// the Graph, so it stays valid for perturbed copies of the parameter set.
  ForwardFn forward(Objective objective = Objective::training_loss) const;

  /// Raw outputs (logits or regression values), one row per sample.
  Tensor predict(Batch batch, const ParameterSet& params) const;
  Tensor predict(Batch batch) const { return predict(batch, params_); }

  /// Digest of the config and every parameter bit.
  std::string fingerprint() const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::vector<LayerInfo> layers_;
  std::vector<DropoutSite> sites_;
  LayerId head_layer_ = 0;
};

/// Deterministic construction: Kaiming-uniform weights, zero biases,
/// N(0, 0.02^2) embeddings, unit norm scales.
Model build_model(const ModelConfig& config, std::uint64_t init_seed);

/// Redraws the output head: weights N(0, 0.02^2) from `head_seed`, bias zero.
/// Every other parameter is left untouched.
Model init_output_head(Model model, std::uint64_t head_seed);

/// Output logits or values for a batch, built on an existing graph.
Var model_outputs(const ModelConfig& config, Graph& graph, Batch batch);

}  // namespace fisherscope
