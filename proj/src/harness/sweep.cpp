#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fisherscope/error.hpp"
#include "fisherscope/harness.hpp"
#include "fisherscope/parallel.hpp"
#include "fisherscope/rng.hpp"
#include "fisherscope/stats.hpp"

namespace fisherscope {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fraction_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

const SweepCell& SweepReport::cell(const std::string& regularizer, double fraction) const {
  for (const auto& c : cells)
    if (c.regularizer == regularizer && c.fraction == fraction) return c;
  throw InvalidArgument("no sweep cell for " + regularizer + " at fraction " + fraction_tag(fraction));
}

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart) {
  return derive_seed(seed, stream_id("restart"), restart);
}

SweepReport sweep(const Model& pretrained, const Dataset& data, std::span<const PlanSpec> plans,
                  const SweepConfig& config) {
  config.train.validate();
  if (plans.empty() || config.fractions.empty() || config.restarts == 0)
    throw InvalidArgument("sweep needs at least one plan, fraction and restart");
  for (const auto& p : plans) apply_plan(pretrained, p.plan);

  SweepReport report;
  for (std::size_t r = 0; r < config.restarts; ++r) report.restart_seeds.push_back(restart_seed(config.seed, r));
  const std::size_t nf = config.fractions.size(), nr = config.restarts;
  report.runs.resize(plans.size() * nf * nr);
  parallel_for(report.runs.size(), config.jobs, [&](std::size_t k) {
    const PlanSpec& plan = plans[k / (nf * nr)];
    const double fraction = config.fractions[(k / nr) % nf];
    const std::size_t r = k % nr;
    const std::uint64_t rs = report.restart_seeds[r];
    TrainConfig tc = config.train;
    tc.data_fraction = fraction;
    const Split split = split_dataset(data, rs, tc.train_fraction, fraction);
    const Model fresh = init_output_head(pretrained, derive_seed(rs, stream_id("head")));
    RunRecord rec = train(fresh, plan.plan, split, tc, derive_seed(rs, stream_id("train")));
    rec.regularizer = plan.label;
    rec.restart = r;
    rec.restart_seed = rs;
    report.runs[k] = std::move(rec);
  });

  for (std::size_t p = 0; p < plans.size(); ++p) {
    for (std::size_t f = 0; f < nf; ++f) {
      SweepCell cell;
      cell.regularizer = plans[p].label;
      cell.fraction = config.fractions[f];
      for (std::size_t r = 0; r < nr; ++r) {
        const RunRecord& run = report.runs[(p * nf + f) * nr + r];
        if (run.failed) ++cell.failed_runs;
        if (run.failed_step < 0 && !run.metrics.values.empty()) cell.values.push_back(run.metrics.primary);
      }
      if (!cell.values.empty()) {
        cell.mean = stats::mean(cell.values);
        cell.max = *std::max_element(cell.values.begin(), cell.values.end());
        cell.q1 = stats::quantile(cell.values, 0.25);
        cell.q3 = stats::quantile(cell.values, 0.75);
        cell.iqr = cell.q3 - cell.q1;
      } else {
        cell.mean = cell.max = cell.q1 = cell.q3 = cell.iqr = std::nan("");
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

void write_sweep(const SweepReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "runs");
  std::string csv = "regularizer,fraction,restart,metric,value\n";
  for (const auto& run : report.runs) {
    const std::string name =
        run.regularizer + "_f" + fraction_tag(run.data_fraction) + "_r" + std::to_string(run.restart) + ".json";
    write_text(out_dir / "runs" / name, to_json(run).dump(2) + "\n");
    const std::string prefix =
        run.regularizer + "," + num(run.data_fraction) + "," + std::to_string(run.restart) + ",";
    for (const auto& [metric, value] : run.metrics.values) csv += prefix + metric + "," + num(value) + "\n";
    if (!run.metrics.values.empty()) csv += prefix + "primary," + num(run.metrics.primary) + "\n";
    csv += prefix + "failed," + (run.failed ? "1" : "0") + "\n";
  }
  write_text(out_dir / "sweep.csv", csv);

  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    cells.push_back({{"regularizer", c.regularizer},
                     {"fraction", c.fraction},
                     {"values", c.values},
                     {"mean", finite(c.mean)},
                     {"max", finite(c.max)},
                     {"q1", finite(c.q1)},
                     {"q3", finite(c.q3)},
                     {"iqr", finite(c.iqr)},
                     {"failed_runs", c.failed_runs}});
  }
  nlohmann::json summary{{"restart_seeds", report.restart_seeds}, {"runs", report.runs.size()}, {"cells", cells}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace fisherscope
