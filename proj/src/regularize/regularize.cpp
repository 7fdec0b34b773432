#include "fisherscope/regularize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fisherscope/error.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

namespace {

void check_keep(double p_keep) {
  if (!(p_keep > 0.0 && p_keep <= 1.0))
    throw InvalidArgument("retention probability must lie in (0, 1], got " + std::to_string(p_keep));
}

void check_drop(double p_drop) {
  if (!(p_drop >= 0.0 && p_drop < 1.0))
    throw InvalidArgument("Gaussian dropout rate must lie in [0, 1), got " + std::to_string(p_drop));
}

}  // namespace

double keep_from_drop_rate(double drop_rate) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0))
    throw InvalidArgument("drop rate must lie in [0, 1), got " + std::to_string(drop_rate));
  return 1.0 - drop_rate;
}

double gaussian_alpha(double p_drop) {
  check_drop(p_drop);
  return p_drop / (1.0 - p_drop);
}

Tensor inverted_dropout_mask(const Shape& shape, double p_keep, std::uint64_t seed) {
  check_keep(p_keep);
  Tensor m(shape);
  if (p_keep == 1.0) {
    m.fill(1.0);
    return m;
  }
  Rng rng(seed);
  const double kept = 1.0 / p_keep;
  for (double& v : m.values()) v = rng.bernoulli(p_keep) ? kept : 0.0;
  return m;
}

Tensor gaussian_noise(const Shape& shape, double p_drop, std::uint64_t seed) {
  const double sd = std::sqrt(gaussian_alpha(p_drop));
  Tensor m(shape);
  if (sd == 0.0) {
    m.fill(1.0);
    return m;
  }
  Rng rng(seed);
  for (double& v : m.values()) v = rng.normal(1.0, sd);
  return m;
}

Tensor standard_dropout(const Tensor& y, double p_keep, std::uint64_t seed, Mode mode) {
  check_keep(p_keep);
  if (mode == Mode::eval || p_keep == 1.0) return y;
  Tensor out = inverted_dropout_mask(y.shape(), p_keep, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return out;
}

Tensor gaussian_dropout(const Tensor& y, double p_drop, std::uint64_t seed, Mode mode) {
  check_drop(p_drop);
  if (mode == Mode::eval || p_drop == 0.0) return y;
  Tensor out = gaussian_noise(y.shape(), p_drop, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return out;
}

std::string_view to_string(ScheduleMode mode) {
  return mode == ScheduleMode::bounded ? "bounded" : "paper-literal";
}

ScheduleMode parse_schedule_mode(std::string_view text) {
  if (text == "bounded") return ScheduleMode::bounded;
  if (text == "paper-literal") return ScheduleMode::paper_literal;
  throw InvalidArgument("unknown schedule mode '" + std::string(text) + "' (expected bounded or paper-literal)");
}

double DropoutSchedule::keep_for(std::uint32_t site) const {
  for (const auto& s : sites)
    if (s.site == site) return s.p;
  throw InvalidArgument("site " + std::to_string(site) + " is not in the schedule");
}

DropoutSchedule build_guided_schedule(const LayerFisherSummary& summary, std::span<const DropoutSite> sites,
                                      double p_lower, double p_upper, ScheduleMode mode) {
  if (!(p_lower > 0.0 && p_lower < p_upper && p_upper <= 1.0))
    throw InvalidArgument("schedule bounds need 0 < P_lower < P_upper <= 1, got " + std::to_string(p_lower) + ", " +
                          std::to_string(p_upper));
  const std::size_t n = sites.size();
  if (n < 2) throw InvalidArgument("a guided schedule needs at least two dropout sites");

  std::vector<DropoutSite> ranked(sites.begin(), sites.end());
  std::stable_sort(ranked.begin(), ranked.end(), [&](const DropoutSite& a, const DropoutSite& b) {
    const auto ra = summary.rank_of(a.layer), rb = summary.rank_of(b.layer);
    return ra != rb ? ra < rb : a.id < b.id;
  });

  DropoutSchedule s;
  s.p_lower = p_lower;
  s.p_upper = p_upper;
  s.mode = mode;
  s.fisher_fingerprint = summary.model_fingerprint;
  const double width = p_upper - p_lower;
  for (std::size_t i = 0; i < n; ++i) {
    double p;
    if (mode == ScheduleMode::bounded)
      p = std::lerp(p_lower, p_upper, static_cast<double>(i) / static_cast<double>(n - 1));
    else
      p = static_cast<double>(i + 1) * (width / static_cast<double>(n));
    s.sites.push_back({ranked[i].id, ranked[i].name, ranked[i].layer, p});
  }
  return s;
}

DropoutSchedule build_guided_schedule(const LayerFisherSummary& summary, const Model& model, double p_lower,
                                      double p_upper, ScheduleMode mode) {
  if (summary.model_fingerprint != model.fingerprint())
    throw FingerprintMismatch(model.fingerprint(), summary.model_fingerprint);
  return build_guided_schedule(summary, model.sites(), p_lower, p_upper, mode);
}

void save_schedule(const DropoutSchedule& schedule, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "fisherscope-schedule";
  j["version"] = kScheduleFileVersion;
  j["mode"] = to_string(schedule.mode);
  j["p_lower"] = schedule.p_lower;
  j["p_upper"] = schedule.p_upper;
  j["fisher_fingerprint"] = schedule.fisher_fingerprint;
  j["sites"] = nlohmann::json::array();
  for (const auto& s : schedule.sites)
    j["sites"].push_back({{"site", s.site}, {"name", s.name}, {"layer", s.layer}, {"p", s.p}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DropoutSchedule load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  DropoutSchedule s;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "fisherscope-schedule") throw CorruptFile("'" + path.string() + "' is not a schedule");
    const int version = j.at("version").get<int>();
    if (version != kScheduleFileVersion)
      throw VersionMismatch("'" + path.string() + "' has schedule version " + std::to_string(version) +
                            ", expected " + std::to_string(kScheduleFileVersion));
    s.mode = parse_schedule_mode(j.at("mode").get<std::string>());
    s.p_lower = j.at("p_lower").get<double>();
    s.p_upper = j.at("p_upper").get<double>();
    s.fisher_fingerprint = j.at("fisher_fingerprint").get<std::string>();
    for (const auto& e : j.at("sites"))
      s.sites.push_back({e.at("site").get<std::uint32_t>(), e.at("name").get<std::string>(),
                         e.at("layer").get<LayerId>(), e.at("p").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("'" + path.string() + "': malformed schedule (" + e.what() + ")");
  } catch (const InvalidArgument& e) {
    throw CorruptFile("'" + path.string() + "': " + e.what());
  }
  for (const auto& site : s.sites)
    if (!(site.p > 0.0 && site.p <= 1.0)) throw CorruptFile("'" + path.string() + "': probability out of range");
  return s;
}

std::string_view to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::standard: return "standard";
    case Regularizer::gaussian: return "gaussian";
    case Regularizer::guided: return "guided";
  }
  return "none";
}

Regularizer parse_regularizer(std::string_view text) {
  for (auto r : {Regularizer::none, Regularizer::standard, Regularizer::gaussian, Regularizer::guided})
    if (text == to_string(r)) return r;
  throw InvalidArgument("unknown regularizer '" + std::string(text) + "'");
}

DropoutPlan DropoutPlan::uniform(Regularizer kind, double p, std::size_t sites) {
  if (kind == Regularizer::guided) throw InvalidArgument("guided plans come from a schedule");
  if (kind == Regularizer::standard) check_keep(p);
  if (kind == Regularizer::gaussian) check_drop(p);
  DropoutPlan plan;
  for (std::size_t i = 0; i < sites; ++i) plan.rules[static_cast<std::uint32_t>(i)] = {kind, p};
  return plan;
}

DropoutPlan DropoutPlan::from_schedule(const DropoutSchedule& schedule) {
  DropoutPlan plan;
  plan.guided = true;
  for (const auto& s : schedule.sites) {
    check_keep(s.p);
    if (!plan.rules.emplace(s.site, SiteRule{Regularizer::guided, s.p}).second)
      throw InvalidArgument("site " + std::to_string(s.site) + " is scheduled twice");
  }
  return plan;
}

Var PlanHook::apply(Graph& graph, Var y, std::uint32_t site, std::uint64_t slot) const {
  const auto it = plan_.rules.find(site);
  if (it == plan_.rules.end()) return y;
  const SiteRule& rule = it->second;
  const std::uint64_t seed = derive_seed(graph.seed(), stream_id("dropout"), site, graph.step(), slot);
  const Shape shape = graph.value(y).shape();
  switch (rule.kind) {
    case Regularizer::none:
      return y;
    case Regularizer::standard:
    case Regularizer::guided:
      if (rule.p == 1.0) return y;
      return graph.mask_mul(y, inverted_dropout_mask(shape, rule.p, seed));
    case Regularizer::gaussian:
      if (rule.p == 0.0) return y;
      return graph.mask_mul(y, gaussian_noise(shape, rule.p, seed));
  }
  return y;
}

PlanHook apply_plan(const Model& model, DropoutPlan plan) {
  const std::size_t n = model.sites().size();
  for (const auto& [site, rule] : plan.rules)
    if (site >= n)
      throw InvalidArgument("unknown dropout site " + std::to_string(site) + " (model has " + std::to_string(n) + ")");
  if (plan.guided && plan.rules.size() != n)
    throw InvalidArgument("guided plan covers " + std::to_string(plan.rules.size()) + " of " + std::to_string(n) +
                          " dropout sites");
  return PlanHook(std::move(plan));
}

}  // namespace fisherscope
