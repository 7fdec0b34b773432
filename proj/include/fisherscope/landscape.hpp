#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "fisherscope/mask.hpp"
#include "fisherscope/model.hpp"

namespace fisherscope {

enum class Normalization { filter, none };

std::string_view to_string(Normalization n);
Normalization parse_normalization(std::string_view text);

/// A perturbation direction with one delta tensor per parameter.
struct Direction {
  std::vector<Tensor> deltas;
  Normalization normalization = Normalization::filter;
  std::uint64_t seed = 0;

  std::vector<double> flatten() const;
};

/// Standard normal deltas. With filter normalisation every group (row of a
/// 2-D weight or embedding, or a whole tensor otherwise) is rescaled to the
/// norm of the matching parameter group; zero groups stay zero.
Direction random_direction(const ParameterSet& params, std::uint64_t seed, Normalization normalization);
Direction random_direction(const Model& model, std::uint64_t seed, Normalization normalization);

/// Evenly spaced points from lo to hi inclusive; the midpoint of a symmetric
/// odd-length axis is exactly zero.
std::vector<double> linspace(double lo, double hi, std::size_t n);

struct LandscapeGrid {
  std::vector<double> alphas;
  /// Empty for a 1-D scan.
  std::vector<double> betas;
  /// Row-major over (alpha, beta); NaN marks a non-finite evaluation.
  std::vector<double> loss;
  double base_loss = 0.0;
  MaskSource mask_source = MaskSource::all;
  double mask_fraction = 1.0;
  std::uint64_t mask_seed = 0;
  std::uint64_t delta_seed = 0;
  std::uint64_t eta_seed = 0;

  bool is_2d() const noexcept { return !betas.empty(); }
  double at(std::size_t a, std::size_t b = 0) const { return loss.at(a * (betas.empty() ? 1 : betas.size()) + b); }
};

/// Mean loss at theta + alpha * (mask * delta) for every alpha. Each point is
/// evaluated on its own copy of the parameters.
LandscapeGrid scan_1d(const ForwardFn& forward, const ParameterSet& params, const Direction& delta,
                      const PerturbationMask& mask, std::span<const double> alphas, Batch dataset,
                      std::size_t jobs = 1);
LandscapeGrid scan_1d(const Model& model, const Direction& delta, const PerturbationMask& mask,
                      std::span<const double> alphas, Batch dataset, std::size_t jobs = 1);

/// Mean loss at theta + mask * (alpha * delta + beta * eta).
LandscapeGrid scan_2d(const ForwardFn& forward, const ParameterSet& params, const Direction& delta,
                      const Direction& eta, const PerturbationMask& mask, std::span<const double> alphas,
                      std::span<const double> betas, Batch dataset, std::size_t jobs = 1);
LandscapeGrid scan_2d(const Model& model, const Direction& delta, const Direction& eta,
                      const PerturbationMask& mask, std::span<const double> alphas, std::span<const double> betas,
                      Batch dataset, std::size_t jobs = 1);

/// Mean loss rise over grid points with |alpha| and |beta| within `radius`.
/// Infinite when any such point is non-finite.
double sharpness_index(const LandscapeGrid& grid, double radius);

/// Writes `alpha,beta,loss` (or `alpha,loss` for 1-D) with empty cells for
/// non-finite losses, plus `<path>.json` holding seeds, mask provenance and
/// base loss.
void export_grid(const LandscapeGrid& grid, const std::filesystem::path& path);

}  // namespace fisherscope
