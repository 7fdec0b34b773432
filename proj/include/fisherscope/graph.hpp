#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fisherscope/parameter.hpp"
#include "fisherscope/tensor.hpp"

namespace fisherscope {

enum class Mode { train, eval };

/// Handle to a node in a Graph.
struct Var {
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();
};

class Graph;

/// Invoked at every dropout site of a train-mode forward. `slot`
/// distinguishes repeated calls at one site within a single forward
/// (e.g. one per sequence in a transformer batch).
class SiteHook {
 public:
  virtual ~SiteHook() = default;
  virtual Var apply(Graph& graph, Var y, std::uint32_t site, std::uint64_t slot) const = 0;
};

struct EvalOptions {
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  const SiteHook* hook = nullptr;
};

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in evaluation order, so the tape is already
/// topologically sorted and backward() is a single reverse sweep. Each op
/// validates shapes and rejects non-finite outputs, naming the current scope.
class Graph {
 public:
  Graph(const ParameterSet& params, EvalOptions options);

  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const noexcept { return options_.mode; }
  std::uint64_t seed() const noexcept { return options_.seed; }
  std::uint64_t step() const noexcept { return options_.step; }

  /// Layer name reported by shape and finiteness errors.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const noexcept { return scope_; }
  /// Sample index reported by finiteness errors; -1 means "use the row".
  void set_sample(std::ptrdiff_t index) { sample_ = index; }

  Var constant(Tensor value);
  /// Leaf bound to parameter `id`; repeated calls return the same node.
  Var param(ParamId id);

  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);     // [m,k] x [k,n]
  Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
  Var bias_add(Var x, Var bias);
  /// x * W^T + b with W stored [out, in].
  Var linear(Var x, Var weight, Var bias) { return bias_add(matmul_nt(x, weight), bias); }
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var relu(Var x);
  Var gelu(Var x);
  Var softmax_rows(Var x);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var embedding(Var table, std::span<const int> ids);
  /// Multi-head scaled dot-product self-attention over one sequence.
  Var attention(Var q, Var k, Var v, std::size_t heads);
  Var mean_rows(Var x);
  Var concat_rows(std::span<const Var> parts);
  Var sum(Var x);
  /// Mean over rows of the per-row softmax cross-entropy.
  Var cross_entropy(Var logits, std::span<const int> labels);
  /// factor * sum((pred - target)^2) / rows.
  Var squared_error(Var pred, const Tensor& target, double factor);
  /// Elementwise product with a constant (dropout masks, noise).
  Var mask_mul(Var x, Tensor mask);
  Var unary(Var x, std::function<double(double)> f, std::function<double(double)> df);

  /// Dropout site: routes through the hook in train mode, identity otherwise.
  Var site(Var y, std::uint32_t site_id, std::uint64_t slot = 0);

  /// Gradients of scalar `loss` for every parameter of the bound set, in id
  /// order. Parameters the loss never touched get zeros.
  std::vector<Tensor> backward(Var loss) const;

  std::uint64_t params_generation() const noexcept { return params_generation_; }
  const ParameterSet* params() const noexcept { return params_; }

 private:
  class Grads;
  using BackwardFn = std::function<void(Grads&, const Tensor& grad_out)>;

  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    ParamId param = std::numeric_limits<ParamId>::max();
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward);
  bool needs(Var v) const { return nodes_[v.index].requires_grad; }
  void check_var(Var v) const;
  [[noreturn]] void shape_fail(const std::string& what) const;

  const ParameterSet* params_;
  std::uint64_t params_generation_;
  EvalOptions options_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> param_nodes_;
  std::string scope_ = "input";
  std::ptrdiff_t sample_ = -1;
};

}  // namespace fisherscope
