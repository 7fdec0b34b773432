#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fisherscope/tensor.hpp"

namespace fisherscope {

enum class ParamRole { weight, bias, embedding, norm_scale, norm_shift };

std::string_view to_string(ParamRole role);
ParamRole parse_param_role(std::string_view text);

/// Parameter identity is the position in architectural order.
using ParamId = std::uint32_t;
using LayerId = std::uint32_t;

struct Parameter {
  ParamId id = 0;
  std::string name;
  LayerId layer = 0;
  ParamRole role = ParamRole::weight;
  Tensor tensor;
};

/// Parameters of one model, iterated in ascending id order.
///
/// Every mutation bumps a generation counter so that activation records
/// built from an older state can be detected.
class ParameterSet {
 public:
  ParameterSet() = default;
  /// Sorts by id and checks ids are exactly 0..n-1.
  explicit ParameterSet(std::vector<Parameter> params);

  std::size_t count() const noexcept { return params_.size(); }
  /// Total number of scalar coordinates.
  std::size_t total_size() const noexcept;

  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  const Parameter& by_name(std::string_view name) const;
  std::span<const Parameter> all() const noexcept { return params_; }

  /// Mutable access; invalidates outstanding activation records.
  Tensor& mutable_tensor(ParamId id);

  std::uint64_t generation() const noexcept { return generation_; }

  /// Concatenation of every tensor in id order.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  /// Offset of each parameter in the flattened layout.
  std::vector<std::size_t> offsets() const;

 private:
  std::vector<Parameter> params_;
  std::uint64_t generation_ = next_generation();

  static std::uint64_t next_generation();
};

/// Per-parameter gradients aligned with a ParameterSet, plus the loss value.
struct GradientRecord {
  std::vector<Tensor> grads;
  double loss = 0.0;

  std::vector<double> flatten() const;
};

}  // namespace fisherscope
