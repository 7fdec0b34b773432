#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fisherscope/mask.hpp"
#include "fisherscope/model.hpp"

namespace fisherscope {

/// Diagonal empirical Fisher: per coordinate, the mean over samples of the
/// squared log-likelihood gradient.
struct FisherEstimate {
  std::vector<Tensor> scores;
  /// Owning layer of each score tensor.
  std::vector<LayerId> param_layers;
  std::vector<std::string> param_names;
  std::size_t sample_count = 0;
  std::string data_digest;
  std::uint64_t seed = 0;
  std::string model_fingerprint;

  std::size_t total_size() const noexcept;
  std::vector<double> flatten() const;
};

/// Content digest of an evaluation set.
std::string dataset_digest(Batch data);

/// Mean over `dataset` of the squared per-sample gradient of `forward`, one
/// tensor per parameter. Non-finite values raise NonFiniteError carrying the
/// offending sample index.
std::vector<Tensor> empirical_fisher_scores(const ForwardFn& forward, Batch dataset, const ParameterSet& params,
                                            std::size_t jobs = 1);

/// Draws `max_samples` samples without replacement (seeded) and averages
/// their squared per-sample gradients of the negative log-likelihood, in
/// eval mode. Accumulation runs in fixed chunks reduced in index order, so
/// the result does not depend on `jobs`.
FisherEstimate estimate_empirical_fisher(const Model& model, Batch dataset, std::size_t max_samples,
                                         std::uint64_t seed, std::size_t jobs = 1);

struct LayerScore {
  LayerId layer = 0;
  std::string name;
  double mean = 0.0;
  double sum = 0.0;
  std::size_t count = 0;
};

struct LayerFisherSummary {
  /// Architectural order.
  std::vector<LayerScore> layers;
  /// Layer ids ascending by mean score, ties by ascending id.
  std::vector<LayerId> ordering;
  std::string model_fingerprint;

  /// 0-based position of `layer` in the ordering.
  std::size_t rank_of(LayerId layer) const;
};

/// Per-layer mean and sum over `layers` (indexed by id). Layers without
/// scores get mean 0.
LayerFisherSummary aggregate_scores(const FisherEstimate& estimate, std::span<const LayerInfo> layers);
LayerFisherSummary aggregate_by_layer(const FisherEstimate& estimate, const Model& model);

enum class ScoreEnd { highest, lowest };

/// Selects round(fraction * P) coordinates by score; ties go to the lower
/// flattened index.
PerturbationMask top_fraction_mask(const FisherEstimate& estimate, double fraction, ScoreEnd end);

struct LayerStability {
  LayerId layer = 0;
  std::size_t selected = 0;
  double cross_correlation = 0.0;
  double kl = 0.0;
};

struct StabilityRow {
  double fraction = 0.0;
  std::vector<LayerStability> layers;
  double correlation_mean = 0.0;
  double correlation_std = 0.0;
  double kl_mean = 0.0;
  double kl_std = 0.0;
};

struct StabilityReport {
  std::vector<StabilityRow> rows;
};

inline constexpr double kKlSmoothing = 1e-12;

/// Cosine similarity of the two score vectors over a coordinate subset.
double cross_correlation(std::span<const double> a, std::span<const double> b);
/// KL(p || q) after adding kKlSmoothing to every entry and normalising.
double smoothed_kl(std::span<const double> p, std::span<const double> q);

/// For each fraction: the global top set by `full`, then per layer with at
/// least two selected coordinates the cosine and KL(full || sub), summarised
/// by the layer-wise mean and population standard deviation.
StabilityReport stability_metrics(const FisherEstimate& full, const FisherEstimate& sub,
                                  std::span<const double> fractions);

/// Writes param_scores_sorted.csv, layer_scores_sorted.csv and
/// layer_scores_unsorted.csv into `out_dir`, each max-normalised.
std::vector<std::filesystem::path> export_score_distributions(const FisherEstimate& estimate,
                                                              const LayerFisherSummary& summary,
                                                              const std::filesystem::path& out_dir);

/// Second central differences of the mean negative log-likelihood.
std::vector<double> hessian_diag_fd(const Model& model, Batch dataset, double step);

inline constexpr int kFisherFileVersion = 1;
void save_fisher(const FisherEstimate& estimate, const std::filesystem::path& path);
FisherEstimate load_fisher(const std::filesystem::path& path);

}  // namespace fisherscope
