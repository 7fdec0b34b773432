#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fisherscope/fisher.hpp"
#include "fisherscope/graph.hpp"
#include "fisherscope/model.hpp"

namespace fisherscope {

/// Retention probability from a drop rate ("dropout 10%" keeps 0.9).
double keep_from_drop_rate(double drop_rate);

/// Gaussian dropout noise variance p / (1 - p).
double gaussian_alpha(double p_drop);

/// Bernoulli(p_keep) mask divided by p_keep.
Tensor inverted_dropout_mask(const Shape& shape, double p_keep, std::uint64_t seed);
/// Multiplicative noise drawn from N(1, alpha).
Tensor gaussian_noise(const Shape& shape, double p_drop, std::uint64_t seed);

/// Train mode: y * mask / p_keep with mask ~ Bernoulli(p_keep). Eval mode:
/// y unchanged.
Tensor standard_dropout(const Tensor& y, double p_keep, std::uint64_t seed, Mode mode);
/// Train mode: y * eps with eps ~ N(1, p_drop / (1 - p_drop)). Eval mode:
/// y unchanged.
Tensor gaussian_dropout(const Tensor& y, double p_drop, std::uint64_t seed, Mode mode);

enum class ScheduleMode { bounded, paper_literal };

std::string_view to_string(ScheduleMode mode);
/// Accepts "bounded" and "paper-literal".
ScheduleMode parse_schedule_mode(std::string_view text);

inline constexpr double kDefaultPLower = 0.85;
inline constexpr double kDefaultPUpper = 0.95;

struct ScheduledSite {
  std::uint32_t site = 0;
  std::string name;
  LayerId layer = 0;
  /// Retention probability.
  double p = 1.0;
};

/// Retention probabilities per dropout site, listed from the least to the
/// most Fisher-sensitive owning layer.
struct DropoutSchedule {
  std::vector<ScheduledSite> sites;
  double p_lower = kDefaultPLower;
  double p_upper = kDefaultPUpper;
  ScheduleMode mode = ScheduleMode::bounded;
  std::string fisher_fingerprint;

  double keep_for(std::uint32_t site) const;
};

/// Ranks sites by the Fisher ordering of their layers (ties by site id) and
/// assigns bounded: P_lower + (i-1)(P_upper-P_lower)/(n-1), or
/// paper_literal: i (P_upper-P_lower)/n, for i = 1..n.
DropoutSchedule build_guided_schedule(const LayerFisherSummary& summary, std::span<const DropoutSite> sites,
                                      double p_lower, double p_upper, ScheduleMode mode);
/// As above, after checking the summary was computed for `model`.
DropoutSchedule build_guided_schedule(const LayerFisherSummary& summary, const Model& model, double p_lower,
                                      double p_upper, ScheduleMode mode);

inline constexpr int kScheduleFileVersion = 1;
void save_schedule(const DropoutSchedule& schedule, const std::filesystem::path& path);
DropoutSchedule load_schedule(const std::filesystem::path& path);

enum class Regularizer { none, standard, gaussian, guided };

std::string_view to_string(Regularizer r);
Regularizer parse_regularizer(std::string_view text);

struct SiteRule {
  Regularizer kind = Regularizer::none;
  /// Retention probability for standard and guided sites, drop rate for
  /// gaussian sites.
  double p = 1.0;
};

/// Per-site regularizer assignment. Sites without a rule pass through.
struct DropoutPlan {
  std::map<std::uint32_t, SiteRule> rules;
  bool guided = false;

  static DropoutPlan uniform(Regularizer kind, double p, std::size_t sites);
  static DropoutPlan from_schedule(const DropoutSchedule& schedule);
};

/// Draws one mask per (site, slot) in every train-mode forward, seeded from
/// hash(graph seed, site, step, slot).
class PlanHook final : public SiteHook {
 public:
  explicit PlanHook(DropoutPlan plan) : plan_(std::move(plan)) {}
  Var apply(Graph& graph, Var y, std::uint32_t site, std::uint64_t slot) const override;
  const DropoutPlan& plan() const noexcept { return plan_; }

 private:
  DropoutPlan plan_;
};

/// Validates `plan` against the model's sites.
PlanHook apply_plan(const Model& model, DropoutPlan plan);

}  // namespace fisherscope
