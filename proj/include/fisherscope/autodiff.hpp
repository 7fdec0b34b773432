#pragma once

#include <functional>
#include <vector>

#include "fisherscope/graph.hpp"
#include "fisherscope/parameter.hpp"
#include "fisherscope/sample.hpp"

namespace fisherscope {

/// Builds the computation for a batch on `graph` and returns the scalar loss.
using ForwardFn = std::function<Var(Graph& graph, Batch batch)>;

/// Result of a forward pass: the loss and the tape needed by backward().
class Evaluation {
 public:
  Evaluation(Graph graph, Var loss) : graph_(std::move(graph)), loss_(loss) {}

  double loss() const { return graph_.value(loss_)[0]; }
  const Graph& graph() const noexcept { return graph_; }
  Var loss_var() const noexcept { return loss_; }

 private:
  Graph graph_;
  Var loss_;
};

Evaluation evaluate_graph(const ForwardFn& forward, Batch batch, const ParameterSet& params,
                          EvalOptions options = {});

/// Exact gradients of the evaluation's loss. Throws StaleRecordError if the
/// parameter set was mutated after the forward pass.
GradientRecord backward(const Evaluation& evaluation);

/// Loss and gradients in one call.
GradientRecord loss_and_gradient(const ForwardFn& forward, Batch batch, const ParameterSet& params,
                                 EvalOptions options = {});

/// One eval-mode backward pass per sample.
std::vector<GradientRecord> per_sample_gradients(const ForwardFn& forward, Batch batch,
                                                 const ParameterSet& params);

/// Central differences (L(t+h e) - L(t-h e)) / 2h for every coordinate.
GradientRecord finite_difference_gradient(const ForwardFn& forward, Batch batch,
                                          const ParameterSet& params, double step,
                                          EvalOptions options = {});

/// Central second differences (L(t+h e) - 2 L(t) + L(t-h e)) / h^2, flattened
/// in parameter order.
std::vector<double> finite_difference_hessian_diagonal(const ForwardFn& forward, Batch batch,
                                                       const ParameterSet& params, double step);

/// Max over coordinates of |a-b| / max(|a|, |b|, floor).
double max_relative_error(const GradientRecord& a, const GradientRecord& b, double floor = 1e-8);

}  // namespace fisherscope
