#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fisherscope/error.hpp"
#include "fisherscope/harness.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

void TrainConfig::validate() const {
  if (epochs == 0) throw InvalidArgument("epochs must be positive");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw InvalidArgument("warmup fraction must lie in [0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train fraction must lie in (0, 1)");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw InvalidArgument("data fraction must lie in (0, 1]");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"warmup_fraction", c.warmup_fraction},
          {"train_fraction", c.train_fraction},
          {"data_fraction", c.data_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.data_fraction = j.value("data_fraction", c.data_fraction);
  c.validate();
  return c;
}

double learning_rate_at(std::size_t step, std::size_t total, double peak, double warmup_fraction) {
  if (total == 0 || step >= total) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

Adam::Adam(const ParameterSet& params, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& p : params.all()) {
    m_.emplace_back(p.tensor.shape());
    v_.emplace_back(p.tensor.shape());
  }
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    Tensor& w = params.mutable_tensor(static_cast<ParamId>(p));
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : r.metrics.values) metrics[k] = v;
  nlohmann::json j{{"regularizer", r.regularizer},
                   {"data_fraction", r.data_fraction},
                   {"restart", r.restart},
                   {"restart_seed", r.restart_seed},
                   {"config", to_json(r.config)},
                   {"train_size", r.train_size},
                   {"dev_size", r.dev_size},
                   {"epoch_loss", r.epoch_loss},
                   {"task", to_string(r.metrics.task)},
                   {"metrics", metrics},
                   {"primary", r.metrics.primary},
                   {"mcc_degenerate", r.metrics.mcc_degenerate},
                   {"failed", r.failed}};
  if (r.failed) j["failure"] = r.failure;
  if (r.failed_step >= 0) j["failed_step"] = r.failed_step;
  return j;
}

double chance_floor(TaskKind task, std::size_t output_dim) {
  switch (task) {
    case TaskKind::classification: return 1.0 / static_cast<double>(output_dim);
    case TaskKind::regression: return 0.0;
    case TaskKind::language_modeling: return -std::log(static_cast<double>(output_dim));
  }
  return 0.0;
}

RunRecord train(const Model& model, const DropoutPlan& plan, const Split& split, const TrainConfig& config,
                std::uint64_t run_seed, Model* trained) {
  config.validate();
  if (split.train.empty() || split.dev.empty()) throw InvalidArgument("training needs nonempty train and dev sets");
  const auto started = std::chrono::steady_clock::now();
  const PlanHook hook = apply_plan(model, plan);
  Model work = model;
  ParameterSet& params = work.mutable_params();
  const ForwardFn forward = work.forward(Objective::training_loss);
  Adam adam(params, config.adam_beta1, config.adam_beta2, config.adam_epsilon);

  RunRecord rec;
  rec.config = config;
  rec.train_size = split.train.size();
  rec.dev_size = split.dev.size();
  rec.data_fraction = config.data_fraction;
  rec.metrics.task = model.config().task;

  const std::size_t n = split.train.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::uint64_t dropout_seed = derive_seed(run_seed, stream_id("dropout"));
  std::vector<std::size_t> order(n);
  std::vector<Sample> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && !rec.failed; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(run_seed, stream_id("minibatch"), epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      batch.clear();
      for (std::size_t i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i)
        batch.push_back(split.train[order[i]]);
      GradientRecord g;
      try {
        g = loss_and_gradient(forward, batch, params, {Mode::train, dropout_seed, step, &hook});
      } catch (const NonFiniteError& e) {
        rec.failed = true;
        rec.failure = std::string("non-finite loss: ") + e.what();
        rec.failed_step = static_cast<std::ptrdiff_t>(step);
        break;
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
      adam.step(params, g.grads, learning_rate_at(step, total, config.learning_rate, config.warmup_fraction));
    }
    if (!rec.failed) rec.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }

  if (!rec.failed) {
    try {
      rec.metrics = compute_metrics(work.predict(split.dev), split.dev, model.config().task);
      if (rec.metrics.primary < chance_floor(model.config().task, model.config().output_dim)) {
        rec.failed = true;
        rec.failure = "dev metric below chance";
      }
    } catch (const NonFiniteError& e) {
      rec.failed = true;
      rec.failure = std::string("non-finite dev outputs: ") + e.what();
    }
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (trained) *trained = std::move(work);
  return rec;
}

PretrainResult pretrain(const ModelConfig& config, const Dataset& data, const TrainConfig& train_config,
                        std::uint64_t seed) {
  if (config.task != data.task)
    throw InvalidArgument("model task " + std::string(to_string(config.task)) + " does not match data task " +
                          std::string(to_string(data.task)));
  Model model = build_model(config, derive_seed(seed, stream_id("model")));
  const Split split = split_dataset(data, derive_seed(seed, stream_id("split")), train_config.train_fraction,
                                    train_config.data_fraction);
  Model trained = model;
  RunRecord rec = train(model, DropoutPlan{}, split, train_config, derive_seed(seed, stream_id("train")), &trained);
  rec.regularizer = "none";
  rec.restart_seed = seed;
  return {std::move(trained), std::move(rec)};
}

}  // namespace fisherscope
