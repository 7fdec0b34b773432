#include "fisherscope/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fisherscope/error.hpp"

namespace fisherscope {

Evaluation evaluate_graph(const ForwardFn& forward, Batch batch, const ParameterSet& params,
                          EvalOptions options) {
  Graph graph(params, options);
  Var loss = forward(graph, batch);
  if (graph.value(loss).size() != 1)
    throw InvalidArgument("forward must return a scalar loss, got shape " +
                          shape_string(graph.value(loss).shape()));
  return Evaluation(std::move(graph), loss);
}

GradientRecord backward(const Evaluation& evaluation) {
  const Graph& g = evaluation.graph();
  if (g.params()->generation() != g.params_generation())
    throw StaleRecordError("parameters were modified after the forward pass");
  return GradientRecord{g.backward(evaluation.loss_var()), evaluation.loss()};
}

GradientRecord loss_and_gradient(const ForwardFn& forward, Batch batch, const ParameterSet& params,
                                 EvalOptions options) {
  return backward(evaluate_graph(forward, batch, params, options));
}

std::vector<GradientRecord> per_sample_gradients(const ForwardFn& forward, Batch batch,
                                                 const ParameterSet& params) {
  if (batch.empty()) throw InvalidArgument("per-sample gradients need at least one sample");
  std::vector<GradientRecord> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.push_back(loss_and_gradient(forward, batch.subspan(i, 1), params));
  return out;
}

GradientRecord finite_difference_gradient(const ForwardFn& forward, Batch batch,
                                          const ParameterSet& params, double step,
                                          EvalOptions options) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  ParameterSet work = params;
  GradientRecord rec;
  rec.loss = evaluate_graph(forward, batch, work, options).loss();
  for (const auto& p : params.all()) {
    Tensor g(p.tensor.shape());
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const double orig = p.tensor[i];
      work.mutable_tensor(p.id)[i] = orig + step;
      const double up = evaluate_graph(forward, batch, work, options).loss();
      work.mutable_tensor(p.id)[i] = orig - step;
      const double down = evaluate_graph(forward, batch, work, options).loss();
      work.mutable_tensor(p.id)[i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
    rec.grads.push_back(std::move(g));
  }
  return rec;
}

std::vector<double> finite_difference_hessian_diagonal(const ForwardFn& forward, Batch batch,
                                                       const ParameterSet& params, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  ParameterSet work = params;
  const double center = evaluate_graph(forward, batch, work).loss();
  std::vector<double> out;
  out.reserve(params.total_size());
  for (const auto& p : params.all()) {
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const double orig = p.tensor[i];
      work.mutable_tensor(p.id)[i] = orig + step;
      const double up = evaluate_graph(forward, batch, work).loss();
      work.mutable_tensor(p.id)[i] = orig - step;
      const double down = evaluate_graph(forward, batch, work).loss();
      work.mutable_tensor(p.id)[i] = orig;
      out.push_back((up - 2.0 * center + down) / (step * step));
    }
  }
  return out;
}

double max_relative_error(const GradientRecord& a, const GradientRecord& b, double floor) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  if (fa.size() != fb.size()) throw InvalidArgument("gradient records are not aligned");
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double denom = std::max({std::abs(fa[i]), std::abs(fb[i]), floor});
    worst = std::max(worst, std::abs(fa[i] - fb[i]) / denom);
  }
  return worst;
}

}  // namespace fisherscope
