#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fisherscope/model.hpp"
#include "fisherscope/sample.hpp"

namespace fisherscope {

struct BinaryConfusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

struct MccResult {
  double value = 0.0;
  /// A confusion-matrix margin was zero; value is reported as 0.
  bool degenerate = false;
};

MccResult matthews(const BinaryConfusion& c);
/// Multiclass (Gorodkin) form; equals the binary formula for two classes.
MccResult matthews(std::span<const int> truth, std::span<const int> predicted);
double accuracy(std::span<const int> truth, std::span<const int> predicted);
/// Unweighted mean of per-class F1 over classes seen in either input; a class
/// with no predicted and no true members cannot occur, and 0/0 precision or
/// recall counts as 0.
double macro_f1(std::span<const int> truth, std::span<const int> predicted);

/// Row argmax, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& scores);

struct MetricRecord {
  TaskKind task = TaskKind::classification;
  /// Named values in a fixed per-task order.
  std::vector<std::pair<std::string, double>> values;
  /// Headline value, higher is better: mean of accuracy and macro-F1 for
  /// classification, mean of Pearson and Spearman for regression, negative
  /// cross-entropy for language modelling.
  double primary = 0.0;
  bool mcc_degenerate = false;

  double get(const std::string& name) const;
};

/// `outputs` are logits (classification, language modelling) or predicted
/// targets (regression), one row per sample.
MetricRecord compute_metrics(const Tensor& outputs, std::span<const Sample> samples, TaskKind task);

}  // namespace fisherscope
