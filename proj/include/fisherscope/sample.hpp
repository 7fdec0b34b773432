#pragma once

#include <span>
#include <vector>

namespace fisherscope {

/// One supervised example. Which fields are populated depends on the task:
/// dense `features` feed the MLP, `tokens` feed the transformer encoder,
/// `label` is the class (or next-token) index, `target` the regression value(s).
struct Sample {
  std::vector<double> features;
  std::vector<int> tokens;
  int label = -1;
  std::vector<double> target;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Batch = std::span<const Sample>;

}  // namespace fisherscope
