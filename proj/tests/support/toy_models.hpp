#pragma once

#include <cmath>
#include <vector>

#include "fisherscope/autodiff.hpp"

namespace fisherscope::testing {

/// Logistic model p(y=1|x) = sigmoid(w . x); loss is the mean negative
/// log-likelihood log(1 + e^z) - y z.
inline ParameterSet logistic_params(std::vector<double> w) {
  const std::size_t d = w.size();
  return ParameterSet({Parameter{0, "w", 0, ParamRole::weight, Tensor({1, d}, std::move(w))}});
}
inline ParameterSet logistic_params(double w) { return logistic_params(std::vector<double>{w}); }

inline ForwardFn logistic_forward() {
  return [](Graph& g, Batch batch) {
    std::vector<double> xs, ys;
    for (const auto& s : batch) {
      xs.insert(xs.end(), s.features.begin(), s.features.end());
      ys.push_back(static_cast<double>(s.label));
    }
    const std::size_t n = batch.size();
    Var z = g.matmul_nt(g.constant(Tensor({n, xs.size() / n}, xs)), g.param(0));
    Var softplus = g.unary(
        z, [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    Var yz = g.mask_mul(z, Tensor({n, 1}, ys));
    return g.scale(g.add(g.sum(softplus), g.scale(g.sum(yz), -1.0)), 1.0 / static_cast<double>(n));
  };
}

/// Scalar polynomial/elementwise losses of one parameter w, for oracle tests.
inline ParameterSet scalar_params(double w) {
  return ParameterSet({Parameter{0, "w", 0, ParamRole::weight, Tensor({1}, {w})}});
}

inline ForwardFn scalar_loss(std::function<double(double)> f, std::function<double(double)> df) {
  return [f, df](Graph& g, Batch) { return g.sum(g.unary(g.param(0), f, df)); };
}

}  // namespace fisherscope::testing
