#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fisherscope/dataset.hpp"
#include "fisherscope/metrics.hpp"
#include "fisherscope/model.hpp"
#include "fisherscope/regularize.hpp"

namespace fisherscope {

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double warmup_fraction = 0.10;
  /// Share of each restart's shuffle used for training; the rest is dev.
  double train_fraction = 0.8;
  /// Paucity cut applied to the training side.
  double data_fraction = 1.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup from 0 to `peak` over the first round(warmup_fraction *
/// total) steps, then linear decay reaching 0 at step `total`.
double learning_rate_at(std::size_t step, std::size_t total, double peak, double warmup_fraction);

/// Adam with bias correction.
class Adam {
 public:
  Adam(const ParameterSet& params, double beta1, double beta2, double epsilon);
  void step(ParameterSet& params, const std::vector<Tensor>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct RunRecord {
  std::string regularizer;
  double data_fraction = 1.0;
  std::size_t restart = 0;
  std::uint64_t restart_seed = 0;
  TrainConfig config;
  std::vector<double> epoch_loss;
  MetricRecord metrics;
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  /// Non-finite loss (with the step) or a dev metric below chance.
  bool failed = false;
  std::string failure;
  std::ptrdiff_t failed_step = -1;
  /// Not persisted, so that run files stay reproducible.
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunRecord& r);

/// Chance floor of the primary metric: 1/C for classification, 0 for
/// regression, -ln(V) for language modelling.
double chance_floor(TaskKind task, std::size_t output_dim);

/// Fine-tunes a copy of `model` on `split.train` with Adam under `plan`
/// (train-mode forwards only) and evaluates on `split.dev`. Minibatch order
/// and dropout masks derive from `run_seed`.
RunRecord train(const Model& model, const DropoutPlan& plan, const Split& split, const TrainConfig& config,
                std::uint64_t run_seed, Model* trained = nullptr);

struct PretrainResult {
  Model model;
  RunRecord record;
};

/// Builds a model from `seed` and trains it without dropout on a split of
/// `data`; the record reports the held-out metrics.
PretrainResult pretrain(const ModelConfig& config, const Dataset& data, const TrainConfig& train_config,
                        std::uint64_t seed);

struct PlanSpec {
  std::string label;
  DropoutPlan plan;
};

struct SweepConfig {
  TrainConfig train;
  std::vector<double> fractions{1.0, 0.5, 0.25, 0.1};
  std::size_t restarts = 5;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct SweepCell {
  std::string regularizer;
  double fraction = 1.0;
  /// Primary metric of every restart that produced one, in restart order.
  std::vector<double> values;
  double mean = 0.0;
  double max = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  std::size_t failed_runs = 0;
};

struct SweepReport {
  std::vector<RunRecord> runs;
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> restart_seeds;

  const SweepCell& cell(const std::string& regularizer, double fraction) const;
};

/// Restart seed r, shared by every plan and fraction so that comparisons are
/// paired.
std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart);

/// For every (plan, fraction, restart): fresh split, fresh output head,
/// train, record. Runs execute on up to `jobs` threads.
SweepReport sweep(const Model& pretrained, const Dataset& data, std::span<const PlanSpec> plans,
                  const SweepConfig& config);

/// runs/<regularizer>_f<fraction>_r<restart>.json, summary.json and
/// sweep.csv (`regularizer,fraction,restart,metric,value`).
void write_sweep(const SweepReport& report, const std::filesystem::path& out_dir);

}  // namespace fisherscope
