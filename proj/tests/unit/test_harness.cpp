#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fisherscope/error.hpp"
#include "fisherscope/harness.hpp"
#include "fisherscope/stats.hpp"
#include "metric_fixtures.hpp"

using namespace fisherscope;
using namespace fisherscope::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig parity_mlp() {
  ModelConfig c;
  c.depth = 2;
  c.width = 32;
  c.input_dim = 10;
  c.output_dim = 2;
  return c;
}

DatasetSpec parity_spec(std::size_t size, std::uint64_t seed) {
  DatasetSpec s;
  s.size = size;
  s.seed = seed;
  return s;
}

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("fisherscope_test_" + name); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

bool same_runs(const RunRecord& a, const RunRecord& b) {
  return a.epoch_loss == b.epoch_loss && a.metrics.values == b.metrics.values && a.failed == b.failed;
}

}  // namespace

TEST_CASE("classification metric fixtures") {
  CHECK(matthews(BinaryConfusion{3, 4, 1, 2}).value == doctest::Approx(0.4082482904638630).epsilon(1e-12));
  CHECK(std::abs(matthews(BinaryConfusion{3, 4, 1, 2}).value - 10.0 / std::sqrt(600.0)) < 1e-15);
  for (const auto& f : kClassFixtures) {
    CHECK(std::abs(matthews(f.truth, f.predicted).value - f.mcc) < 1e-6);
    CHECK(std::abs(macro_f1(f.truth, f.predicted) - f.macro_f1) < 1e-6);
  }
  const std::vector<int> y{0, 1, 1, 0, 1};
  CHECK(matthews(y, y).value == doctest::Approx(1.0));
  CHECK(accuracy(y, y) == 1.0);
  CHECK(macro_f1(y, y) == 1.0);

  const std::vector<int> all_one(5, 1);
  auto degenerate = matthews(y, all_one);
  CHECK(degenerate.degenerate);
  CHECK(degenerate.value == 0.0);
  CHECK(matthews(BinaryConfusion{5, 0, 0, 0}).degenerate);
  CHECK_THROWS_AS(accuracy(std::vector<int>{1}, std::vector<int>{1}), InvalidArgument);
}

TEST_CASE("correlation metric fixtures") {
  for (const auto& f : kCorrFixtures) {
    CHECK(std::abs(stats::pearson(f.x, f.y) - f.pearson) < 1e-6);
    CHECK(std::abs(stats::spearman(f.x, f.y) - f.spearman) < 1e-6);
  }
}

TEST_CASE("metric records per task") {
  std::vector<Sample> cls(4);
  for (int i = 0; i < 4; ++i) cls[static_cast<std::size_t>(i)].label = i % 2;
  Tensor logits({4, 2}, {2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.2});
  auto m = compute_metrics(logits, cls, TaskKind::classification);
  // Argmax [0, 1, 0 (tie), 0] against labels [0, 1, 0, 1].
  CHECK(m.get("accuracy") == 0.75);
  CHECK(m.get("macro_f1") == doctest::Approx((0.8 + 2.0 / 3.0) / 2));
  CHECK(m.primary == doctest::Approx((0.75 + m.get("macro_f1")) / 2));
  CHECK_THROWS_AS(m.get("pearson"), InvalidArgument);

  std::vector<Sample> reg(3);
  for (int i = 0; i < 3; ++i) reg[static_cast<std::size_t>(i)].target = {static_cast<double>(i + 1)};
  auto r = compute_metrics(Tensor({3, 1}, {2.0, 4.0, 6.0}), reg, TaskKind::regression);
  CHECK(r.get("pearson") == doctest::Approx(1.0));
  CHECK(r.get("spearman") == doctest::Approx(1.0));
  CHECK(r.values.size() == 3);

  std::vector<Sample> lm(2);
  lm[0].label = 0;
  lm[1].label = 1;
  auto l = compute_metrics(Tensor({2, 2}, {0.0, 0.0, 0.0, 0.0}), lm, TaskKind::language_modeling);
  CHECK(l.get("cross_entropy") == doctest::Approx(std::log(2.0)));
  CHECK(l.get("perplexity") == doctest::Approx(2.0));
}

TEST_CASE("datasets") {
  SUBCASE("synthetic data is regenerated exactly") {
    auto a = make_dataset(parity_spec(1000, 7));
    auto b = make_dataset(parity_spec(1000, 7));
    REQUIRE(a.size() == 1000);
    bool same = true;
    for (std::size_t i = 0; i < a.size(); ++i)
      same = same && a.samples[i].features == b.samples[i].features && a.samples[i].label == b.samples[i].label;
    CHECK(same);
    auto c = make_dataset(parity_spec(1000, 8));
    CHECK(c.samples[0].features != a.samples[0].features);
    for (const auto& s : a.samples) {
      const double prod = s.features[0] * s.features[1] * s.features[2];
      CHECK(s.label == (prod < 0 ? 1 : 0));
    }
    DatasetSpec rs;
    rs.source = DataSource::synthetic_regression;
    rs.task = TaskKind::regression;
    rs.size = 50;
    auto reg = make_dataset(rs);
    CHECK(reg.samples[3].target.size() == 1);
    CHECK(reg.output_dim == 1);
  }
  SUBCASE("char corpus windows") {
    const auto path = temp("corpus.txt");
    std::string text;
    for (int i = 0; i < 100; ++i) text.push_back(static_cast<char>('a' + i % 26));
    write_file(path, text);
    DatasetSpec s;
    s.source = DataSource::char_corpus;
    s.task = TaskKind::language_modeling;
    s.path = path;
    s.window = 10;
    s.size = 0;
    auto d = make_dataset(s);
    CHECK(d.size() == 90);
    CHECK(d.samples[0].tokens.size() == 10);
    CHECK(d.samples[0].label == 'k');
    CHECK(d.output_dim == kByteVocab);
    fs::remove(path);
    CHECK_THROWS_AS(make_dataset(s), IoError);
  }
  SUBCASE("tabular csv") {
    const auto path = temp("table.csv");
    write_file(path, "a,b,label\n1.5,2,1\n0,-1,0\n3,3,2\n");
    DatasetSpec s;
    s.source = DataSource::tabular_csv;
    s.path = path;
    s.size = 0;
    auto d = make_dataset(s);
    CHECK(d.size() == 3);
    CHECK(d.input_dim == 2);
    CHECK(d.output_dim == 3);
    CHECK(d.samples[0].features == std::vector<double>{1.5, 2.0});
    s.label_column = "target";
    CHECK_THROWS_WITH_AS(make_dataset(s), doctest::Contains("no label column"), InvalidArgument);
    write_file(path, "a,label\nx,1\n");
    s.label_column = "label";
    CHECK_THROWS_AS(make_dataset(s), InvalidArgument);
    fs::remove(path);
  }
}

TEST_CASE("splits") {
  auto d = make_dataset(parity_spec(1250, 1));
  auto full = split_dataset(d, 3, 0.8, 1.0);
  CHECK(full.train.size() == 1000);
  CHECK(full.dev.size() == 250);
  CHECK(split_dataset(d, 3, 0.8, 0.1).train.size() == 100);
  auto other = split_dataset(d, 4, 0.8, 1.0);
  CHECK(other.dev.size() == full.dev.size());
  std::set<std::vector<double>> a, b;
  for (const auto& s : full.dev) a.insert(s.features);
  for (const auto& s : other.dev) b.insert(s.features);
  CHECK(a != b);
  auto again = split_dataset(d, 3, 0.8, 0.1);
  CHECK(again.train[5].features == split_dataset(d, 3, 0.8, 0.1).train[5].features);
  CHECK_THROWS_AS(split_dataset(d, 3, 0.8, 0.0), InvalidArgument);
  CHECK_THROWS_AS(split_dataset(make_dataset(parity_spec(2, 1)), 3, 0.8, 0.1), InvalidArgument);
}

TEST_CASE("learning rate schedule endpoints") {
  const std::size_t total = 300;
  CHECK(learning_rate_at(0, total, 1e-3, 0.1) == 0.0);
  CHECK(learning_rate_at(30, total, 1e-3, 0.1) == 1e-3);
  CHECK(learning_rate_at(15, total, 1e-3, 0.1) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(total - 1, total, 1e-3, 0.1) == doctest::Approx(1e-3 / 270));
  CHECK(learning_rate_at(total, total, 1e-3, 0.1) == 0.0);
  CHECK(learning_rate_at(0, total, 1e-3, 0.0) == 1e-3);
  for (std::size_t s = 31; s < total; ++s)
    CHECK(learning_rate_at(s, total, 1e-3, 0.1) < learning_rate_at(s - 1, total, 1e-3, 0.1));
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  ParameterSet ps({Parameter{0, "w", 0, ParamRole::weight, Tensor({3}, {1.0, -2.0, 0.5})}});
  Adam adam(ps, 0.9, 0.999, 1e-8);
  adam.step(ps, {Tensor({3}, {0.3, -4.0, 0.0})}, 0.01);
  CHECK(ps[0].tensor[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(ps[0].tensor[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(ps[0].tensor[2] == 0.5);
  CHECK(adam.steps() == 1);
}

TEST_CASE("training") {
  TrainConfig pre_cfg;
  pre_cfg.epochs = 15;
  pre_cfg.learning_rate = 3e-3;
  auto pre = pretrain(parity_mlp(), make_dataset(parity_spec(3000, 100)), pre_cfg, 1);
  CHECK(pre.record.metrics.get("accuracy") > 0.95);

  auto data = make_dataset(parity_spec(1250, 7));
  auto split = split_dataset(data, 2, 0.8, 1.0);
  REQUIRE(split.train.size() == 1000);
  const Model fresh = init_output_head(pre.model, 5);
  TrainConfig cfg;

  SUBCASE("pretrained parity model fine-tunes above 0.9 under every regularizer") {
    const std::vector<DropoutPlan> plans{DropoutPlan::uniform(Regularizer::standard, 0.9, 2),
                                         DropoutPlan::uniform(Regularizer::gaussian, 0.1, 2),
                                         DropoutPlan::uniform(Regularizer::none, 1.0, 2)};
    for (const auto& plan : plans) {
      auto rec = train(fresh, plan, split, cfg, 11);
      CHECK(rec.metrics.get("accuracy") > 0.9);
      CHECK_FALSE(rec.failed);
      CHECK(rec.epoch_loss.size() == 3);
    }
  }
  SUBCASE("no dropout equals keep-probability one") {
    auto a = train(fresh, DropoutPlan::uniform(Regularizer::none, 1.0, 2), split, cfg, 11);
    auto b = train(fresh, DropoutPlan::uniform(Regularizer::standard, 1.0, 2), split, cfg, 11);
    CHECK(same_runs(a, b));
  }
  SUBCASE("runs are reproducible") {
    auto plan = DropoutPlan::uniform(Regularizer::standard, 0.8, 2);
    CHECK(same_runs(train(fresh, plan, split, cfg, 11), train(fresh, plan, split, cfg, 11)));
    CHECK_FALSE(same_runs(train(fresh, plan, split, cfg, 11), train(fresh, plan, split, cfg, 12)));
  }
  SUBCASE("divergence is recorded as a failed run") {
    Split bad = split;
    bad.train[40].features.assign(10, 1e308);
    cfg.epochs = 1;
    auto rec = train(fresh, DropoutPlan{}, bad, cfg, 1);
    CHECK(rec.failed);
    CHECK(rec.failed_step >= 0);
    CHECK(rec.failed_step < 32);
  }
}

TEST_CASE("sweeps") {
  TrainConfig pre_cfg;
  pre_cfg.epochs = 10;
  pre_cfg.learning_rate = 3e-3;
  auto pre = pretrain(parity_mlp(), make_dataset(parity_spec(2000, 100)), pre_cfg, 2);
  auto data = make_dataset(parity_spec(400, 7));
  const std::vector<PlanSpec> plans{{"standard", DropoutPlan::uniform(Regularizer::standard, 0.9, 2)},
                                    {"gaussian", DropoutPlan::uniform(Regularizer::gaussian, 0.1, 2)},
                                    {"standard_again", DropoutPlan::uniform(Regularizer::standard, 0.9, 2)}};
  SweepConfig cfg;
  cfg.fractions = {1.0, 0.5, 0.1};
  cfg.restarts = 5;
  cfg.seed = 4;
  auto report = sweep(pre.model, data, plans, cfg);
  CHECK(report.runs.size() == 45);
  CHECK(report.cells.size() == 9);
  CHECK(report.restart_seeds.size() == 5);
  for (const auto& c : report.cells) {
    CHECK(c.iqr >= 0.0);
    CHECK(c.max >= c.mean);
  }
  for (double f : cfg.fractions) CHECK(report.cell("standard", f).values == report.cell("standard_again", f).values);
  CHECK(report.cell("standard", 1.0).mean >= report.cell("standard", 0.1).mean);

  cfg.jobs = 3;
  auto threaded = sweep(pre.model, data, plans, cfg);
  for (std::size_t i = 0; i < report.runs.size(); ++i) CHECK(same_runs(report.runs[i], threaded.runs[i]));

  const auto dir = temp("sweep");
  fs::remove_all(dir);
  write_sweep(report, dir);
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "runs" / "gaussian_f0.5_r3.json"));
  std::ifstream csv(dir / "sweep.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "regularizer,fraction,restart,metric,value");
  fs::remove_all(dir);
}
