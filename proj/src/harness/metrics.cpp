#include "fisherscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fisherscope/error.hpp"
#include "fisherscope/stats.hpp"

namespace fisherscope {

namespace {

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) throw InvalidArgument("metric inputs differ in length: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a < 2) throw InvalidArgument("metrics need at least two samples");
}

}  // namespace

MccResult matthews(const BinaryConfusion& c) {
  const double den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (den == 0.0) return {0.0, true};
  return {(c.tp * c.tn - c.fp * c.fn) / std::sqrt(den), false};
}

MccResult matthews(std::span<const int> truth, std::span<const int> predicted) {
  check_aligned(truth.size(), predicted.size());
  const int k = std::max(*std::max_element(truth.begin(), truth.end()),
                         *std::max_element(predicted.begin(), predicted.end())) + 1;
  std::vector<double> t(static_cast<std::size_t>(k), 0.0), p(t);
  double correct = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    t[static_cast<std::size_t>(truth[i])] += 1.0;
    p[static_cast<std::size_t>(predicted[i])] += 1.0;
    correct += truth[i] == predicted[i];
  }
  const double s = static_cast<double>(truth.size());
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t c = 0; c < t.size(); ++c) {
    pt += p[c] * t[c];
    pp += p[c] * p[c];
    tt += t[c] * t[c];
  }
  const double den = (s * s - pp) * (s * s - tt);
  if (den == 0.0) return {0.0, true};
  return {(correct * s - pt) / std::sqrt(den), false};
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  check_aligned(truth.size(), predicted.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i];
  return correct / static_cast<double>(truth.size());
}

double macro_f1(std::span<const int> truth, std::span<const int> predicted) {
  check_aligned(truth.size(), predicted.size());
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  double total = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && predicted[i] == c;
      fp += truth[i] != c && predicted[i] == c;
      fn += truth[i] == c && predicted[i] != c;
    }
    total += 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

std::vector<int> argmax_rows(const Tensor& scores) {
  std::vector<int> out;
  out.reserve(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = scores.row(r);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

double MetricRecord::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  throw InvalidArgument("metric '" + name + "' not recorded for " + std::string(to_string(task)));
}

MetricRecord compute_metrics(const Tensor& outputs, std::span<const Sample> samples, TaskKind task) {
  check_aligned(outputs.rows(), samples.size());
  MetricRecord m;
  m.task = task;
  if (task == TaskKind::regression) {
    if (outputs.cols() != 1) throw InvalidArgument("regression metrics expect one output per sample");
    std::vector<double> pred, truth;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].target.size() != 1) throw InvalidArgument("regression metrics expect one target per sample");
      pred.push_back(outputs[i]);
      truth.push_back(samples[i].target[0]);
    }
    const double r = stats::pearson(truth, pred);
    const double rho = stats::spearman(truth, pred);
    m.values = {{"pearson", r}, {"spearman", rho}, {"pearson_spearman_mean", (r + rho) / 2}};
    m.primary = (r + rho) / 2;
    return m;
  }

  std::vector<int> truth;
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= outputs.cols())
      throw InvalidArgument("label " + std::to_string(s.label) + " outside " + std::to_string(outputs.cols()) +
                            " output classes");
    truth.push_back(s.label);
  }
  if (task == TaskKind::language_modeling) {
    double ce = 0.0;
    for (std::size_t r = 0; r < outputs.rows(); ++r) {
      const auto row = outputs.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      ce += mx + std::log(z) - row[static_cast<std::size_t>(truth[r])];
    }
    ce /= static_cast<double>(outputs.rows());
    m.values = {{"cross_entropy", ce}, {"perplexity", std::exp(ce)}};
    m.primary = -ce;
    return m;
  }

  const auto pred = argmax_rows(outputs);
  const double acc = accuracy(truth, pred);
  const double f1 = macro_f1(truth, pred);
  const auto mcc = matthews(truth, pred);
  m.values = {{"accuracy", acc}, {"macro_f1", f1}, {"mcc", mcc.value}, {"accuracy_f1_mean", (acc + f1) / 2}};
  m.mcc_degenerate = mcc.degenerate;
  m.primary = (acc + f1) / 2;
  return m;
}

}  // namespace fisherscope
