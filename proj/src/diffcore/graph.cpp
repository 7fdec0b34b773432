#include "fisherscope/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "fisherscope/error.hpp"

namespace fisherscope {

class Graph::Grads {
 public:
  explicit Grads(const std::vector<Node>& nodes) : nodes_(nodes), grads_(nodes.size()) {}

  const Tensor& value(Var v) const { return nodes_[v.index].value; }
  bool wants(Var v) const { return nodes_[v.index].requires_grad; }

  /// Gradient accumulator for `v`, zero-initialised on first touch.
  Tensor& at(Var v) {
    Tensor& g = grads_[v.index];
    if (g.size() == 0) g = Tensor(nodes_[v.index].value.shape());
    return g;
  }
  bool touched(std::size_t i) const { return grads_[i].size() != 0; }
  const Tensor& raw(std::size_t i) const { return grads_[i]; }

 private:
  const std::vector<Node>& nodes_;
  std::vector<Tensor> grads_;
};

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// out[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
}

// out[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] += s;
    }
}

// out[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[p * n + j] += av * b[i * n + j];
    }
}

bool is_matrix(const Tensor& t) { return t.rank() == 2; }

}  // namespace

Graph::Graph(const ParameterSet& params, EvalOptions options)
    : params_(&params),
      params_generation_(params.generation()),
      options_(options),
      param_nodes_(params.count(), std::numeric_limits<std::uint32_t>::max()) {}

void Graph::shape_fail(const std::string& what) const { throw ShapeError(scope_, what); }

void Graph::check_var(Var v) const {
  if (v.index >= nodes_.size()) throw InvalidArgument("variable does not belong to this graph");
}

Var Graph::push(Tensor value, bool requires_grad, BackwardFn backward) {
  if (!value.all_finite())
    throw NonFiniteError(scope_, sample_ >= 0 ? sample_ : value.first_nonfinite_row());
  nodes_.push_back(Node{std::move(value), requires_grad ? std::move(backward) : BackwardFn{},
                        requires_grad});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, {}); }

Var Graph::param(ParamId id) {
  if (id >= param_nodes_.size()) throw InvalidArgument("unknown parameter id " + std::to_string(id));
  if (param_nodes_[id] != std::numeric_limits<std::uint32_t>::max()) return Var{param_nodes_[id]};
  Var v = push((*params_)[id].tensor, true, [](Grads&, const Tensor&) {});
  nodes_[v.index].param = id;
  param_nodes_[id] = v.index;
  return v;
}

Var Graph::matmul(Var a, Var b) {
  check_var(a), check_var(b);
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!is_matrix(A) || !is_matrix(B) || A.cols() != B.rows())
    shape_fail("matmul " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  gemm_nn(A.values(), B.values(), out.values(), m, k, n);
  return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Grads& g, const Tensor& go) {
    if (g.wants(a)) gemm_nt(go.values(), g.value(b).values(), g.at(a).values(), m, n, k);
    if (g.wants(b)) gemm_tn(g.value(a).values(), go.values(), g.at(b).values(), m, k, n);
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  check_var(a), check_var(b);
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!is_matrix(A) || !is_matrix(B) || A.cols() != B.cols())
    shape_fail("matmul " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  gemm_nt(A.values(), B.values(), out.values(), m, k, n);
  return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Grads& g, const Tensor& go) {
    if (g.wants(a)) gemm_nn(go.values(), g.value(b).values(), g.at(a).values(), m, n, k);
    if (g.wants(b)) gemm_tn(go.values(), g.value(a).values(), g.at(b).values(), m, n, k);
  });
}

Var Graph::bias_add(Var x, Var bias) {
  check_var(x), check_var(bias);
  const Tensor& X = value(x);
  const Tensor& B = value(bias);
  if (B.rank() != 1 || X.cols() != B.size())
    shape_fail("bias " + shape_string(B.shape()) + " for input " + shape_string(X.shape()));
  Tensor out = X;
  const std::size_t m = X.rows(), n = X.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  return push(std::move(out), needs(x) || needs(bias), [x, bias, m, n](Grads& g, const Tensor& go) {
    if (g.wants(x)) {
      auto gx = g.at(x).values();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (g.wants(bias)) {
      auto gb = g.at(bias).values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
    }
  });
}

Var Graph::add(Var a, Var b) {
  check_var(a), check_var(b);
  if (value(a).shape() != value(b).shape())
    shape_fail("add " + shape_string(value(a).shape()) + " + " + shape_string(value(b).shape()));
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += value(b)[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Grads& g, const Tensor& go) {
    for (Var v : {a, b}) {
      if (!g.wants(v)) continue;
      auto gv = g.at(v).values();
      for (std::size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  check_var(a), check_var(b);
  if (value(a).shape() != value(b).shape())
    shape_fail("mul " + shape_string(value(a).shape()) + " * " + shape_string(value(b).shape()));
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Grads& g, const Tensor& go) {
    if (g.wants(a)) {
      auto ga = g.at(a).values();
      const auto& B = g.value(b);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * B[i];
    }
    if (g.wants(b)) {
      auto gb = g.at(b).values();
      const auto& A = g.value(a);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * A[i];
    }
  });
}

Var Graph::scale(Var a, double factor) {
  check_var(a);
  Tensor out = value(a);
  for (double& v : out.values()) v *= factor;
  return push(std::move(out), needs(a), [a, factor](Grads& g, const Tensor& go) {
    auto ga = g.at(a).values();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
  });
}

Var Graph::relu(Var x) {
  check_var(x);
  Tensor out = value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), needs(x), [x](Grads& g, const Tensor& go) {
    auto gx = g.at(x).values();
    const auto& X = g.value(x);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (X[i] > 0.0) gx[i] += go[i];
  });
}

// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var Graph::gelu(Var x) {
  check_var(x);
  Tensor out = value(x);
  for (double& v : out.values()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return push(std::move(out), needs(x), [x](Grads& g, const Tensor& go) {
    auto gx = g.at(x).values();
    const auto& X = g.value(x);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double v = X[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Var Graph::softmax_rows(Var x) {
  check_var(x);
  Tensor out = value(x);
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) s += (v = std::exp(v - mx));
    for (double& v : r) v /= s;
  }
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  return push(std::move(out), needs(x), [x, self, m, n](Grads& g, const Tensor& go) {
    const auto& Y = g.value(self);
    auto gx = g.at(x).values();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go[i * n + j] * Y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += Y[i * n + j] * (go[i * n + j] - dot);
    }
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_var(x), check_var(gamma), check_var(beta);
  const Tensor& X = value(x);
  const std::size_t m = X.rows(), n = X.cols();
  if (value(gamma).rank() != 1 || value(gamma).size() != n || value(beta).shape() != value(gamma).shape())
    shape_fail("layer norm over " + std::to_string(n) + " features given scale " +
               shape_string(value(gamma).shape()) + " and shift " + shape_string(value(beta).shape()));
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out(X.shape());
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = X.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (r[j] - mean) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = G[j] * h + B[j];
    }
  }
  return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [x, gamma, beta, m, n, xhat, inv_std](Grads& g, const Tensor& go) {
                const Tensor& G = g.value(gamma);
                if (g.wants(gamma)) {
                  auto gg = g.at(gamma).values();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += go[i * n + j] * (*xhat)[i * n + j];
                }
                if (g.wants(beta)) {
                  auto gb = g.at(beta).values();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
                }
                if (g.wants(x)) {
                  auto gx = g.at(x).values();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double mean_d = 0.0, mean_dh = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = go[i * n + j] * G[j];
                      mean_d += d;
                      mean_dh += d * (*xhat)[i * n + j];
                    }
                    mean_d *= inv_n;
                    mean_dh *= inv_n;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = go[i * n + j] * G[j];
                      gx[i * n + j] += (*inv_std)[i] * (d - mean_d - (*xhat)[i * n + j] * mean_dh);
                    }
                  }
                }
              });
}

Var Graph::embedding(Var table, std::span<const int> ids) {
  check_var(table);
  const Tensor& T = value(table);
  if (!is_matrix(T)) shape_fail("embedding table must be a matrix, got " + shape_string(T.shape()));
  if (ids.empty()) shape_fail("embedding lookup with no ids");
  const std::size_t d = T.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows())
      shape_fail("id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(T.rows()));
    std::copy_n(T.row(static_cast<std::size_t>(ids[i])).begin(), d, out.row(i).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return push(std::move(out), needs(table), [table, idx = std::move(idx), d](Grads& g, const Tensor& go) {
    Tensor& gt = g.at(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto r = gt.row(static_cast<std::size_t>(idx[i]));
      for (std::size_t j = 0; j < d; ++j) r[j] += go[i * d + j];
    }
  });
}

Var Graph::attention(Var q, Var k, Var v, std::size_t heads) {
  check_var(q), check_var(k), check_var(v);
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  if (!is_matrix(Q) || Q.shape() != K.shape() || Q.shape() != V.shape())
    shape_fail("attention q/k/v shapes " + shape_string(Q.shape()) + ", " + shape_string(K.shape()) +
               ", " + shape_string(V.shape()));
  const std::size_t t = Q.rows(), d = Q.cols();
  if (heads == 0 || d % heads != 0)
    shape_fail("width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is the [t,t] attention matrix of head h.
  auto probs = std::make_shared<std::vector<std::vector<double>>>(heads, std::vector<double>(t * t));
  Tensor out({t, d});
  for (std::size_t h = 0; h < heads; ++h) {
    auto& A = (*probs)[h];
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * d + off + c] * K[j * d + off + c];
        A[i * t + j] = s * inv_sqrt;
        mx = std::max(mx, A[i * t + j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) z += (A[i * t + j] = std::exp(A[i * t + j] - mx));
      for (std::size_t j = 0; j < t; ++j) A[i * t + j] /= z;
      for (std::size_t j = 0; j < t; ++j) {
        const double a = A[i * t + j];
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += a * V[j * d + off + c];
      }
    }
  }
  return push(std::move(out), needs(q) || needs(k) || needs(v),
              [q, k, v, t, d, dh, heads, inv_sqrt, probs](Grads& g, const Tensor& go) {
                const Tensor& Q = g.value(q);
                const Tensor& K = g.value(k);
                const Tensor& V = g.value(v);
                std::vector<double> dA(t * t), dS(t * t);
                for (std::size_t h = 0; h < heads; ++h) {
                  const auto& A = (*probs)[h];
                  const std::size_t off = h * dh;
                  // dA = dO V^T ; dV = A^T dO
                  for (std::size_t i = 0; i < t; ++i)
                    for (std::size_t j = 0; j < t; ++j) {
                      double s = 0.0;
                      for (std::size_t c = 0; c < dh; ++c) s += go[i * d + off + c] * V[j * d + off + c];
                      dA[i * t + j] = s;
                    }
                  if (g.wants(v)) {
                    auto gv = g.at(v).values();
                    for (std::size_t i = 0; i < t; ++i)
                      for (std::size_t j = 0; j < t; ++j) {
                        const double a = A[i * t + j];
                        for (std::size_t c = 0; c < dh; ++c) gv[j * d + off + c] += a * go[i * d + off + c];
                      }
                  }
                  // softmax backward, folded with the 1/sqrt(dh) scaling
                  for (std::size_t i = 0; i < t; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < t; ++j) dot += dA[i * t + j] * A[i * t + j];
                    for (std::size_t j = 0; j < t; ++j)
                      dS[i * t + j] = A[i * t + j] * (dA[i * t + j] - dot) * inv_sqrt;
                  }
                  if (g.wants(q)) {
                    auto gq = g.at(q).values();
                    for (std::size_t i = 0; i < t; ++i)
                      for (std::size_t j = 0; j < t; ++j) {
                        const double s = dS[i * t + j];
                        for (std::size_t c = 0; c < dh; ++c) gq[i * d + off + c] += s * K[j * d + off + c];
                      }
                  }
                  if (g.wants(k)) {
                    auto gk = g.at(k).values();
                    for (std::size_t i = 0; i < t; ++i)
                      for (std::size_t j = 0; j < t; ++j) {
                        const double s = dS[i * t + j];
                        for (std::size_t c = 0; c < dh; ++c) gk[j * d + off + c] += s * Q[i * d + off + c];
                      }
                  }
                }
              });
}

Var Graph::mean_rows(Var x) {
  check_var(x);
  const Tensor& X = value(x);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += X[i * n + j];
  for (double& v : out.values()) v /= static_cast<double>(m);
  return push(std::move(out), needs(x), [x, m, n](Grads& g, const Tensor& go) {
    auto gx = g.at(x).values();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j] * inv;
  });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) shape_fail("concat of zero parts");
  std::size_t rows = 0;
  const std::size_t n = value(parts.front()).cols();
  bool grad = false;
  for (Var p : parts) {
    check_var(p);
    if (!is_matrix(value(p)) || value(p).cols() != n)
      shape_fail("concat part " + shape_string(value(p).shape()) + " with " + std::to_string(n) + " columns");
    rows += value(p).rows();
    grad = grad || needs(p);
  }
  Tensor out({rows, n});
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy(value(p).values().begin(), value(p).values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += value(p).size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), grad, [ps = std::move(ps)](Grads& g, const Tensor& go) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t sz = g.value(p).size();
      if (g.wants(p)) {
        auto gp = g.at(p).values();
        for (std::size_t i = 0; i < sz; ++i) gp[i] += go[off + i];
      }
      off += sz;
    }
  });
}

Var Graph::sum(Var x) {
  check_var(x);
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  return push(Tensor({1}, {s}), needs(x), [x](Grads& g, const Tensor& go) {
    for (double& v : g.at(x).values()) v += go[0];
  });
}

Var Graph::cross_entropy(Var logits, std::span<const int> labels) {
  check_var(logits);
  const Tensor& L = value(logits);
  const std::size_t m = L.rows(), n = L.cols();
  if (labels.size() != m)
    shape_fail(std::to_string(labels.size()) + " labels for " + std::to_string(m) + " logit rows");
  auto probs = std::make_shared<Tensor>(L.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n)
      shape_fail("label " + std::to_string(labels[i]) + " outside " + std::to_string(n) + " classes");
    auto r = L.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += ((*probs)[i * n + j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= z;
    loss += -(r[static_cast<std::size_t>(labels[i])] - mx - std::log(z));
  }
  loss /= static_cast<double>(m);
  std::vector<int> lab(labels.begin(), labels.end());
  return push(Tensor({1}, {loss}), needs(logits),
              [logits, probs, lab = std::move(lab), m, n](Grads& g, const Tensor& go) {
                auto gl = g.at(logits).values();
                const double s = go[0] / static_cast<double>(m);
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < n; ++j) {
                    const double y = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                    gl[i * n + j] += s * ((*probs)[i * n + j] - y);
                  }
              });
}

Var Graph::squared_error(Var pred, const Tensor& target, double factor) {
  check_var(pred);
  const Tensor& P = value(pred);
  if (P.size() != target.size() || P.rows() != target.rows())
    shape_fail("prediction " + shape_string(P.shape()) + " vs target " + shape_string(target.shape()));
  const double m = static_cast<double>(P.rows());
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - target[i]) * (P[i] - target[i]);
  return push(Tensor({1}, {factor * s / m}), needs(pred),
              [pred, target, factor, m](Grads& g, const Tensor& go) {
                auto gp = g.at(pred).values();
                const Tensor& P = g.value(pred);
                for (std::size_t i = 0; i < P.size(); ++i)
                  gp[i] += go[0] * factor * 2.0 * (P[i] - target[i]) / m;
              });
}

Var Graph::mask_mul(Var x, Tensor mask) {
  check_var(x);
  if (mask.size() != value(x).size())
    shape_fail("mask " + shape_string(mask.shape()) + " for " + shape_string(value(x).shape()));
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return push(std::move(out), needs(x), [x, mask = std::move(mask)](Grads& g, const Tensor& go) {
    auto gx = g.at(x).values();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
  });
}

Var Graph::unary(Var x, std::function<double(double)> f, std::function<double(double)> df) {
  check_var(x);
  Tensor out = value(x);
  for (double& v : out.values()) v = f(v);
  return push(std::move(out), needs(x), [x, df = std::move(df)](Grads& g, const Tensor& go) {
    auto gx = g.at(x).values();
    const auto& X = g.value(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(X[i]);
  });
}

Var Graph::site(Var y, std::uint32_t site_id, std::uint64_t slot) {
  check_var(y);
  if (options_.mode != Mode::train || options_.hook == nullptr) return y;
  return options_.hook->apply(*this, y, site_id, slot);
}

std::vector<Tensor> Graph::backward(Var loss) const {
  check_var(loss);
  if (value(loss).size() != 1)
    throw InvalidArgument("backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  Grads grads(nodes_);
  std::vector<Tensor> out;
  out.reserve(params_->count());
  for (const auto& p : params_->all()) out.emplace_back(p.tensor.shape());
  if (!nodes_[loss.index].requires_grad) return out;

  grads.at(loss)[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!grads.touched(i) || !nodes_[i].requires_grad) continue;
    const Node& node = nodes_[i];
    if (node.param != std::numeric_limits<ParamId>::max()) {
      out[node.param] = grads.raw(i);
      continue;
    }
    node.backward(grads, grads.raw(i));
  }
  return out;
}

}  // namespace fisherscope
