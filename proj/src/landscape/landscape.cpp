#include "fisherscope/landscape.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "fisherscope/error.hpp"
#include "fisherscope/parallel.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool row_groups(const Parameter& p) {
  return p.tensor.shape().size() == 2 && (p.role == ParamRole::weight || p.role == ParamRole::embedding);
}

void require_zero(std::span<const double> axis, const char* name) {
  if (axis.empty()) throw InvalidArgument(std::string(name) + " axis is empty");
  for (double v : axis)
    if (v == 0.0) return;
  throw InvalidArgument(std::string(name) + " axis must include 0");
}

double loss_at(const ForwardFn& forward, const ParameterSet& base, std::span<const double> theta,
               std::span<const double> step, Batch dataset) {
  ParameterSet copy = base;
  std::vector<double> moved(theta.begin(), theta.end());
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += step[i];
  for (double v : moved)
    if (!std::isfinite(v)) return kNaN;
  copy.assign_flat(moved);
  try {
    const double l = evaluate_graph(forward, dataset, copy).loss();
    return std::isfinite(l) ? l : kNaN;
  } catch (const NonFiniteError&) {
    return kNaN;
  }
}

std::vector<double> masked(const Direction& d, const PerturbationMask& mask, std::size_t total) {
  auto flat = d.flatten();
  if (flat.size() != total || mask.size() != total)
    throw InvalidArgument("direction and mask must cover all " + std::to_string(total) + " coordinates");
  for (std::size_t i = 0; i < total; ++i)
    if (!mask[i]) flat[i] = 0.0;
  return flat;
}

LandscapeGrid scan(const ForwardFn& forward, const ParameterSet& params, const Direction& delta, const Direction* eta,
                   const PerturbationMask& mask, std::span<const double> alphas, std::span<const double> betas,
                   Batch dataset, std::size_t jobs) {
  if (dataset.empty()) throw InvalidArgument("landscape scan needs a nonempty dataset");
  require_zero(alphas, "alpha");
  if (eta) require_zero(betas, "beta");

  const std::size_t total = params.total_size();
  const auto d = masked(delta, mask, total);
  const auto e = eta ? masked(*eta, mask, total) : std::vector<double>(total, 0.0);
  const auto theta = params.flatten();

  LandscapeGrid grid;
  grid.alphas.assign(alphas.begin(), alphas.end());
  if (eta) grid.betas.assign(betas.begin(), betas.end());
  grid.mask_source = mask.source;
  grid.mask_fraction = mask.fraction;
  grid.mask_seed = mask.seed;
  grid.delta_seed = delta.seed;
  grid.eta_seed = eta ? eta->seed : 0;
  grid.base_loss = evaluate_graph(forward, dataset, params).loss();

  const std::size_t nb = eta ? betas.size() : 1;
  grid.loss.assign(alphas.size() * nb, kNaN);
  parallel_for(grid.loss.size(), jobs, [&](std::size_t cell) {
    const double a = alphas[cell / nb];
    const double b = eta ? betas[cell % nb] : 0.0;
    std::vector<double> step(total);
    for (std::size_t i = 0; i < total; ++i) step[i] = a * d[i] + b * e[i];
    grid.loss[cell] = loss_at(forward, params, theta, step, dataset);
  });
  return grid;
}

std::string cell(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Normalization n) { return n == Normalization::filter ? "filter" : "none"; }

Normalization parse_normalization(std::string_view text) {
  if (text == "filter") return Normalization::filter;
  if (text == "none") return Normalization::none;
  throw InvalidArgument("unknown normalization '" + std::string(text) + "'");
}

std::vector<double> Direction::flatten() const {
  std::vector<double> out;
  for (const auto& t : deltas) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

Direction random_direction(const ParameterSet& params, std::uint64_t seed, Normalization normalization) {
  Direction dir;
  dir.normalization = normalization;
  dir.seed = seed;
  Rng rng(derive_seed(seed, stream_id("direction")));
  for (const auto& p : params.all()) {
    Tensor t(p.tensor.shape());
    for (double& v : t.values()) v = rng.normal();
    if (normalization == Normalization::filter) {
      const std::size_t groups = row_groups(p) ? p.tensor.rows() : 1;
      const std::size_t len = p.tensor.size() / groups;
      for (std::size_t g = 0; g < groups; ++g) {
        double pn = 0.0, dn = 0.0;
        for (std::size_t i = g * len; i < (g + 1) * len; ++i) {
          pn += p.tensor[i] * p.tensor[i];
          dn += t[i] * t[i];
        }
        const double factor = (pn == 0.0 || dn == 0.0) ? 0.0 : std::sqrt(pn) / std::sqrt(dn);
        for (std::size_t i = g * len; i < (g + 1) * len; ++i) t[i] *= factor;
      }
    }
    dir.deltas.push_back(std::move(t));
  }
  return dir;
}

Direction random_direction(const Model& model, std::uint64_t seed, Normalization normalization) {
  return random_direction(model.params(), seed, normalization);
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double m = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i);
    out[i] = ((m - k) * lo + k * hi) / m;
  }
  return out;
}

LandscapeGrid scan_1d(const ForwardFn& forward, const ParameterSet& params, const Direction& delta,
                      const PerturbationMask& mask, std::span<const double> alphas, Batch dataset, std::size_t jobs) {
  return scan(forward, params, delta, nullptr, mask, alphas, {}, dataset, jobs);
}

LandscapeGrid scan_1d(const Model& model, const Direction& delta, const PerturbationMask& mask,
                      std::span<const double> alphas, Batch dataset, std::size_t jobs) {
  return scan_1d(model.forward(), model.params(), delta, mask, alphas, dataset, jobs);
}

LandscapeGrid scan_2d(const ForwardFn& forward, const ParameterSet& params, const Direction& delta,
                      const Direction& eta, const PerturbationMask& mask, std::span<const double> alphas,
                      std::span<const double> betas, Batch dataset, std::size_t jobs) {
  return scan(forward, params, delta, &eta, mask, alphas, betas, dataset, jobs);
}

LandscapeGrid scan_2d(const Model& model, const Direction& delta, const Direction& eta,
                      const PerturbationMask& mask, std::span<const double> alphas, std::span<const double> betas,
                      Batch dataset, std::size_t jobs) {
  return scan_2d(model.forward(), model.params(), delta, eta, mask, alphas, betas, dataset, jobs);
}

double sharpness_index(const LandscapeGrid& grid, double radius) {
  const std::size_t nb = grid.is_2d() ? grid.betas.size() : 1;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < grid.alphas.size(); ++a) {
    if (std::abs(grid.alphas[a]) > radius) continue;
    for (std::size_t b = 0; b < nb; ++b) {
      if (grid.is_2d() && std::abs(grid.betas[b]) > radius) continue;
      const double l = grid.at(a, b);
      if (!std::isfinite(l)) return std::numeric_limits<double>::infinity();
      sum += l - grid.base_loss;
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("no grid points within radius " + std::to_string(radius));
  return sum / static_cast<double>(count);
}

void export_grid(const LandscapeGrid& grid, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::size_t nb = grid.is_2d() ? grid.betas.size() : 1;
  out << (grid.is_2d() ? "alpha,beta,loss\n" : "alpha,loss\n");
  for (std::size_t a = 0; a < grid.alphas.size(); ++a)
    for (std::size_t b = 0; b < nb; ++b) {
      out << cell(grid.alphas[a]) << ',';
      if (grid.is_2d()) out << cell(grid.betas[b]) << ',';
      out << cell(grid.at(a, b)) << '\n';
    }
  if (!out) throw IoError("write to '" + path.string() + "' failed");

  nlohmann::json meta;
  meta["dimensions"] = grid.is_2d() ? 2 : 1;
  meta["base_loss"] = grid.base_loss;
  meta["mask"] = {{"source", to_string(grid.mask_source)}, {"fraction", grid.mask_fraction}, {"seed", grid.mask_seed}};
  meta["delta_seed"] = grid.delta_seed;
  if (grid.is_2d()) meta["eta_seed"] = grid.eta_seed;
  std::size_t non_finite = 0;
  for (double v : grid.loss) non_finite += !std::isfinite(v);
  meta["non_finite_cells"] = non_finite;
  auto side = path;
  side += ".json";
  std::ofstream js(side, std::ios::trunc);
  if (!js) throw IoError("cannot write '" + side.string() + "'");
  js << meta.dump(2) << '\n';
}

}  // namespace fisherscope
