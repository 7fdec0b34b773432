#include "fisherscope/parameter.hpp"

#include <algorithm>
#include <atomic>

#include "fisherscope/error.hpp"

namespace fisherscope {

std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::embedding: return "embedding";
    case ParamRole::norm_scale: return "norm_scale";
    case ParamRole::norm_shift: return "norm_shift";
  }
  return "weight";
}

ParamRole parse_param_role(std::string_view text) {
  for (auto r : {ParamRole::weight, ParamRole::bias, ParamRole::embedding, ParamRole::norm_scale,
                 ParamRole::norm_shift})
    if (to_string(r) == text) return r;
  throw InvalidArgument("unknown parameter role '" + std::string(text) + "'");
}

std::uint64_t ParameterSet::next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

ParameterSet::ParameterSet(std::vector<Parameter> params) : params_(std::move(params)) {
  std::sort(params_.begin(), params_.end(),
            [](const Parameter& a, const Parameter& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].id != i)
      throw InvalidArgument("parameter ids must be unique and dense; found id " +
                            std::to_string(params_[i].id) + " at position " + std::to_string(i));
    if (!params_[i].tensor.all_finite())
      throw NonFiniteError(params_[i].name, params_[i].tensor.first_nonfinite_row());
  }
}

std::size_t ParameterSet::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

const Parameter& ParameterSet::by_name(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

Tensor& ParameterSet::mutable_tensor(ParamId id) {
  generation_ = next_generation();
  return params_.at(id).tensor;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& p : params_) flat.insert(flat.end(), p.tensor.values().begin(), p.tensor.values().end());
  return flat;
}

void ParameterSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != total_size())
    throw InvalidArgument("flat parameter vector has " + std::to_string(flat.size()) +
                          " entries, expected " + std::to_string(total_size()));
  generation_ = next_generation();
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.tensor.size(), p.tensor.data());
    off += p.tensor.size();
  }
}

std::vector<std::size_t> ParameterSet::offsets() const {
  std::vector<std::size_t> out;
  out.reserve(params_.size());
  std::size_t off = 0;
  for (const auto& p : params_) {
    out.push_back(off);
    off += p.tensor.size();
  }
  return out;
}

std::vector<double> GradientRecord::flatten() const {
  std::vector<double> flat;
  for (const auto& g : grads) flat.insert(flat.end(), g.values().begin(), g.values().end());
  return flat;
}

}  // namespace fisherscope
