#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fisherscope/checkpoint.hpp"
#include "fisherscope/error.hpp"
#include "fisherscope/fisher.hpp"
#include "fisherscope/rng.hpp"
#include "fisherscope/stats.hpp"
#include "toy_models.hpp"

using namespace fisherscope;
using namespace fisherscope::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig small_mlp() {
  ModelConfig c;
  c.depth = 2;
  c.width = 6;
  c.input_dim = 3;
  c.output_dim = 3;
  return c;
}

std::vector<Sample> gaussian_samples(std::uint64_t seed, std::size_t n, std::size_t dim, int classes) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    for (std::size_t j = 0; j < dim; ++j) s.features.push_back(rng.normal());
    s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    out.push_back(std::move(s));
  }
  return out;
}

FisherEstimate handmade(std::vector<Tensor> scores, std::vector<LayerId> layers) {
  FisherEstimate e;
  for (std::size_t i = 0; i < scores.size(); ++i) e.param_names.push_back("p" + std::to_string(i));
  e.scores = std::move(scores);
  e.param_layers = std::move(layers);
  e.sample_count = 1;
  e.model_fingerprint = "fp";
  return e;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

double last_field(const std::string& line) { return std::stod(line.substr(line.rfind(',') + 1)); }

}  // namespace

TEST_CASE("logistic score at the origin is 0.25") {
  auto params = logistic_params(0.0);
  std::vector<Sample> one{{{1.0}, {}, 1, {}}};
  auto scores = empirical_fisher_scores(logistic_forward(), one, params);
  CHECK(scores[0][0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("estimate structure") {
  Model m = build_model(small_mlp(), 2);
  auto data = gaussian_samples(7, 40, 3, 3);

  SUBCASE("copies of one sample match a single sample") {
    std::vector<Sample> single(1, data[0]), copies(5, data[0]);
    auto a = estimate_empirical_fisher(m, single, 1, 0).flatten();
    auto b = estimate_empirical_fisher(m, copies, 5, 0).flatten();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-14));
  }
  SUBCASE("union is the size-weighted average") {
    std::vector<Sample> d1(data.begin(), data.begin() + 15), d2(data.begin() + 15, data.end());
    auto f1 = estimate_empirical_fisher(m, d1, d1.size(), 0).flatten();
    auto f2 = estimate_empirical_fisher(m, d2, d2.size(), 0).flatten();
    auto fu = estimate_empirical_fisher(m, data, data.size(), 0).flatten();
    for (std::size_t i = 0; i < fu.size(); ++i)
      CHECK(std::abs(fu[i] - (15.0 * f1[i] + 25.0 * f2[i]) / 40.0) < 1e-12);
  }
  SUBCASE("metadata and nonnegativity") {
    auto e = estimate_empirical_fisher(m, data, 10, 3);
    CHECK(e.sample_count == 10);
    CHECK(e.model_fingerprint == m.fingerprint());
    CHECK(e.data_digest == dataset_digest(data));
    CHECK(e.total_size() == m.params().total_size());
    for (double v : e.flatten()) CHECK(v >= 0.0);
  }
  SUBCASE("deterministic in the seed and independent of jobs") {
    auto a = estimate_empirical_fisher(m, data, 20, 9, 1);
    auto b = estimate_empirical_fisher(m, data, 20, 9, 4);
    auto c = estimate_empirical_fisher(m, data, 20, 10, 1);
    for (std::size_t p = 0; p < a.scores.size(); ++p) CHECK(bitwise_equal(a.scores[p], b.scores[p]));
    CHECK(a.flatten() != c.flatten());
  }
}

TEST_CASE("estimation errors") {
  Model m = build_model(small_mlp(), 2);
  auto data = gaussian_samples(1, 5, 3, 3);
  CHECK_THROWS_AS(estimate_empirical_fisher(m, Batch{}, 1, 0), InvalidArgument);
  CHECK_THROWS_AS(estimate_empirical_fisher(m, data, 6, 0), InvalidArgument);
  CHECK_THROWS_AS(estimate_empirical_fisher(m, data, 0, 0), InvalidArgument);
  data[3].features = {1e308, 1e308, 1e308};
  try {
    estimate_empirical_fisher(m, data, 5, 0);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.batch_index() == 3);
  }
}

TEST_CASE("layer aggregation") {
  const std::vector<LayerInfo> layers{{0, "layer1"}, {1, "layer2"}};
  auto est = handmade({Tensor({2}, {0.2, 0.4}), Tensor({1}, {0.1})}, {0, 1});
  auto s = aggregate_scores(est, layers);
  CHECK(s.layers[0].mean == doctest::Approx(0.3));
  CHECK(s.layers[1].mean == doctest::Approx(0.1));
  CHECK(s.layers[0].sum == doctest::Approx(0.6));
  CHECK(s.ordering == std::vector<LayerId>{1, 0});
  CHECK(s.rank_of(0) == 1);

  SUBCASE("ties fall back to layer id") {
    auto flat = handmade({Tensor({2}, {0.5, 0.5}), Tensor({1}, {0.5})}, {1, 0});
    CHECK(aggregate_scores(flat, layers).ordering == std::vector<LayerId>{0, 1});
  }
  SUBCASE("ordering is scale invariant") {
    Model m = build_model(small_mlp(), 4);
    auto e = estimate_empirical_fisher(m, gaussian_samples(2, 30, 3, 3), 30, 0);
    const auto before = aggregate_by_layer(e, m).ordering;
    for (double c : {1e-6, 3.0, 1e6}) {
      auto scaled = e;
      for (auto& t : scaled.scores)
        for (double& v : t.values()) v *= c;
      CHECK(aggregate_by_layer(scaled, m).ordering == before);
    }
  }
  SUBCASE("fingerprint mismatch") {
    Model m = build_model(small_mlp(), 4);
    auto e = estimate_empirical_fisher(m, gaussian_samples(2, 4, 3, 3), 4, 0);
    CHECK_THROWS_AS(aggregate_by_layer(e, build_model(small_mlp(), 5)), FingerprintMismatch);
  }
}

TEST_CASE("fraction masks") {
  auto est = handmade({Tensor({4}, {3.0, 1.0, 2.0, 5.0})}, {0});
  auto top = top_fraction_mask(est, 0.5, ScoreEnd::highest);
  CHECK(top.flags == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(top.source == MaskSource::fisher_top);
  auto bottom = top_fraction_mask(est, 0.5, ScoreEnd::lowest);
  for (std::size_t i = 0; i < 4; ++i) CHECK(top[i] != bottom[i]);
  CHECK(top_fraction_mask(est, 1.0, ScoreEnd::highest).popcount() == 4);
  CHECK_THROWS_AS(top_fraction_mask(est, 0.0, ScoreEnd::highest), InvalidArgument);

  SUBCASE("ties go to the lower index") {
    auto tied = handmade({Tensor({4}, {1.0, 2.0, 2.0, 2.0})}, {0});
    CHECK(top_fraction_mask(tied, 0.5, ScoreEnd::highest).flags == std::vector<std::uint8_t>{0, 1, 1, 0});
  }
  SUBCASE("selection size is exact") {
    Rng rng(5);
    for (std::size_t total : {1u, 7u, 100u, 1001u}) {
      std::vector<double> v(total);
      for (double& x : v) x = rng.uniform();
      auto e = handmade({Tensor({total}, v)}, {0});
      for (double f : {0.0025, 0.01, 0.05, 0.25, 0.5, 0.8, 1.0}) {
        const auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(total)));
        CHECK(top_fraction_mask(e, f, ScoreEnd::highest).popcount() == k);
        CHECK(top_fraction_mask(e, f, ScoreEnd::lowest).popcount() == k);
        CHECK(random_mask(total, f, 3).popcount() == k);
      }
    }
  }
  SUBCASE("random masks are seeded") {
    CHECK(random_mask(500, 0.3, 1).flags == random_mask(500, 0.3, 1).flags);
    CHECK(random_mask(500, 0.3, 1).flags != random_mask(500, 0.3, 2).flags);
  }
}

TEST_CASE("stability formulas") {
  const std::vector<double> a{0.5, 0.5}, b{0.9, 0.1};
  CHECK(cross_correlation(a, b) == doctest::Approx(0.7808688094430304).epsilon(1e-12));
  // ln(5/3): 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1).
  CHECK(smoothed_kl(a, b) == doctest::Approx(0.5108256237659907).epsilon(1e-9));
  CHECK(smoothed_kl(a, a) == 0.0);
  CHECK(cross_correlation(a, a) == doctest::Approx(1.0));
  const std::vector<double> zero{0.0, 0.0};
  CHECK(cross_correlation(a, zero) == 0.0);
  CHECK(std::isfinite(smoothed_kl(a, zero)));
}

TEST_CASE("stability report") {
  Model m = build_model(small_mlp(), 6);
  auto data = gaussian_samples(3, 60, 3, 3);
  auto full = estimate_empirical_fisher(m, data, 60, 0);
  const std::vector<double> fractions{0.5, 0.25, 0.1};

  auto same = stability_metrics(full, full, fractions);
  REQUIRE(same.rows.size() == 3);
  for (const auto& row : same.rows) {
    CHECK_FALSE(row.layers.empty());
    for (const auto& l : row.layers) {
      CHECK(l.selected >= 2);
      CHECK(l.cross_correlation == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(l.kl == doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK(row.correlation_std == doctest::Approx(0.0).epsilon(1e-12));
  }

  auto sub = estimate_empirical_fisher(m, data, 6, 1);
  for (const auto& row : stability_metrics(full, sub, fractions).rows) {
    for (const auto& l : row.layers) {
      CHECK(l.cross_correlation >= -1.0);
      CHECK(l.cross_correlation <= 1.0);
      CHECK(l.kl >= 0.0);
    }
  }

  const std::vector<double> tiny{1e-9};
  CHECK_THROWS_AS(stability_metrics(full, full, tiny), InvalidArgument);
  auto other = estimate_empirical_fisher(build_model(small_mlp(), 7), data, 60, 0);
  CHECK_THROWS_AS(stability_metrics(full, other, fractions), FingerprintMismatch);
}

TEST_CASE("score distribution export") {
  Model m = build_model(small_mlp(), 8);
  auto est = estimate_empirical_fisher(m, gaussian_samples(4, 30, 3, 3), 30, 0);
  auto summary = aggregate_by_layer(est, m);
  const auto dir = fs::temp_directory_path() / "fisherscope_test_export";
  fs::remove_all(dir);
  auto paths = export_score_distributions(est, summary, dir);
  REQUIRE(paths.size() == 3);

  auto params = read_lines(paths[0]);
  CHECK(params.front() == "rank,score");
  CHECK(params.size() == est.total_size() + 1);
  std::vector<double> curve;
  for (std::size_t i = 1; i < params.size(); ++i) curve.push_back(last_field(params[i]));
  CHECK(std::is_sorted(curve.begin(), curve.end()));
  CHECK(curve.back() == 1.0);

  auto sorted = read_lines(paths[1]);
  auto unsorted = read_lines(paths[2]);
  CHECK(sorted.front() == "rank,layer,score");
  CHECK(unsorted.front() == "position,layer,score");
  std::vector<double> s, u;
  for (std::size_t i = 1; i < sorted.size(); ++i) s.push_back(last_field(sorted[i]));
  for (std::size_t i = 1; i < unsorted.size(); ++i) u.push_back(last_field(unsorted[i]));
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(s.back() == 1.0);
  std::sort(u.begin(), u.end());
  CHECK(u == s);
  fs::remove_all(dir);
}

TEST_CASE("fisher file round trip") {
  Model m = build_model(small_mlp(), 8);
  auto est = estimate_empirical_fisher(m, gaussian_samples(4, 12, 3, 3), 10, 2);
  const auto path = fs::temp_directory_path() / "fisherscope_test.fisher";
  save_fisher(est, path);
  auto back = load_fisher(path);
  CHECK(back.model_fingerprint == est.model_fingerprint);
  CHECK(back.data_digest == est.data_digest);
  CHECK(back.sample_count == 10);
  CHECK(back.seed == 2);
  CHECK(back.param_layers == est.param_layers);
  CHECK(back.param_names == est.param_names);
  for (std::size_t p = 0; p < est.scores.size(); ++p) CHECK(bitwise_equal(back.scores[p], est.scores[p]));
  CHECK_THROWS_AS(load_checkpoint(path), CorruptFile);
  fs::remove(path);
}

TEST_CASE("fisher tracks the hessian at a converged logistic model") {
  // Well-specified labels drawn from a teacher; features on different scales.
  constexpr std::size_t d = 8, n = 4000;
  Rng rng(21);
  std::vector<double> teacher(d);
  for (double& w : teacher) w = rng.normal(0.0, 0.7);
  std::vector<Sample> data;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s.features.push_back(rng.normal(0.0, 0.25 + 0.25 * static_cast<double>(j)));
      z += teacher[j] * s.features.back();
    }
    s.label = rng.bernoulli(1.0 / (1.0 + std::exp(-z))) ? 1 : 0;
    data.push_back(std::move(s));
  }
  auto params = logistic_params(std::vector<double>(d, 0.0));
  const auto fwd = logistic_forward();
  for (int it = 0; it < 3000; ++it) {
    auto rec = loss_and_gradient(fwd, data, params);
    auto& w = params.mutable_tensor(0);
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.5 * rec.grads[0][j];
  }
  for (double g : loss_and_gradient(fwd, data, params).flatten()) CHECK(std::abs(g) < 1e-5);
  const auto fisher = empirical_fisher_scores(fwd, data, params);
  const auto hess = finite_difference_hessian_diagonal(fwd, data, params, 1e-3);
  const auto& f = fisher[0].values();
  CHECK(stats::spearman(std::vector<double>(f.begin(), f.end()), hess) > 0.9);
}

TEST_CASE("sub-sample KL shrinks as the sub-sample grows") {
  ModelConfig c;
  c.depth = 2;
  c.width = 16;
  c.input_dim = 6;
  const Model model = build_model(c, 3);
  Rng rng(21);
  std::vector<Sample> data(2000);
  for (auto& s : data) {
    for (int j = 0; j < 6; ++j) s.features.push_back(rng.normal());
    s.label = rng.uniform() < 0.5 ? 0 : 1;
  }
  const auto full = estimate_empirical_fisher(model, data, data.size(), 0);
  const std::vector<double> fractions{1.0, 0.33, 0.10, 0.01};
  const std::vector<double> topk{0.05};
  std::vector<double> kl(fractions.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      const auto m = static_cast<std::size_t>(std::llround(fractions[i] * static_cast<double>(data.size())));
      const auto sub = estimate_empirical_fisher(model, data, m, derive_seed(seed, i));
      kl[i] += stability_metrics(full, sub, topk).rows[0].kl_mean / 10.0;
    }
  CHECK(kl[0] == 0.0);
  for (std::size_t i = 1; i < kl.size(); ++i) CHECK(kl[i] >= kl[i - 1]);
  CHECK(kl.back() > kl[1]);
}
