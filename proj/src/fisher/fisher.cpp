#include "fisherscope/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fisherscope/blobfile.hpp"
#include "fisherscope/error.hpp"
#include "fisherscope/hash.hpp"
#include "fisherscope/parallel.hpp"
#include "fisherscope/rng.hpp"
#include "fisherscope/stats.hpp"

namespace fisherscope {

namespace {

constexpr std::size_t kChunk = 32;

void check_fingerprint(const std::string& expected, const std::string& actual) {
  if (expected != actual) throw FingerprintMismatch(expected, actual);
}

}  // namespace

std::size_t FisherEstimate::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& t : scores) n += t.size();
  return n;
}

std::vector<double> FisherEstimate::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& t : scores) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

std::string dataset_digest(Batch data) {
  Digest d;
  d.update(static_cast<std::uint64_t>(data.size()));
  for (const auto& s : data) {
    d.update(s.features);
    d.update(static_cast<std::uint64_t>(s.tokens.size()));
    for (int t : s.tokens) d.update(static_cast<std::uint64_t>(static_cast<std::int64_t>(t)));
    d.update(static_cast<std::uint64_t>(static_cast<std::int64_t>(s.label)));
    d.update(s.target);
  }
  return d.hex();
}

std::vector<Tensor> empirical_fisher_scores(const ForwardFn& forward, Batch dataset, const ParameterSet& params,
                                            std::size_t jobs) {
  if (dataset.empty()) throw InvalidArgument("Fisher estimation needs a nonempty dataset");
  const std::size_t chunks = (dataset.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<double>> partial(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    std::vector<double> acc(params.total_size(), 0.0);
    const std::size_t end = std::min(dataset.size(), (c + 1) * kChunk);
    for (std::size_t idx = c * kChunk; idx < end; ++idx) {
      GradientRecord rec;
      try {
        rec = loss_and_gradient(forward, dataset.subspan(idx, 1), params);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(e.layer(), static_cast<std::ptrdiff_t>(idx));
      }
      std::size_t off = 0;
      for (const auto& g : rec.grads) {
        for (double v : g.values()) {
          const double sq = v * v;
          if (!std::isfinite(sq)) throw NonFiniteError("gradient", static_cast<std::ptrdiff_t>(idx));
          acc[off++] += sq;
        }
      }
    }
    partial[c] = std::move(acc);
  });

  std::vector<double> total(params.total_size(), 0.0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += p[i];

  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  std::vector<Tensor> scores;
  std::size_t off = 0;
  for (const auto& p : params.all()) {
    Tensor t(p.tensor.shape());
    for (double& v : t.values()) v = total[off++] * inv_n;
    scores.push_back(std::move(t));
  }
  return scores;
}

FisherEstimate estimate_empirical_fisher(const Model& model, Batch dataset, std::size_t max_samples,
                                         std::uint64_t seed, std::size_t jobs) {
  if (dataset.empty()) throw InvalidArgument("Fisher estimation needs a nonempty dataset");
  if (max_samples == 0 || max_samples > dataset.size())
    throw InvalidArgument("max_samples must lie in [1, " + std::to_string(dataset.size()) + "], got " +
                          std::to_string(max_samples));

  std::vector<std::size_t> chosen(dataset.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (max_samples < dataset.size()) {
    Rng rng(derive_seed(seed, stream_id("fisher-subsample")));
    rng.shuffle(chosen);
    chosen.resize(max_samples);
    std::sort(chosen.begin(), chosen.end());
  }
  std::vector<Sample> subset;
  subset.reserve(chosen.size());
  for (std::size_t i : chosen) subset.push_back(dataset[i]);

  FisherEstimate est;
  try {
    est.scores = empirical_fisher_scores(model.forward(Objective::negative_log_likelihood), subset, model.params(),
                                         jobs);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(e.layer(), static_cast<std::ptrdiff_t>(chosen.at(static_cast<std::size_t>(e.batch_index()))));
  }
  est.sample_count = chosen.size();
  est.data_digest = dataset_digest(dataset);
  est.seed = seed;
  est.model_fingerprint = model.fingerprint();
  for (const auto& p : model.params().all()) {
    est.param_layers.push_back(p.layer);
    est.param_names.push_back(p.name);
  }
  return est;
}

std::size_t LayerFisherSummary::rank_of(LayerId layer) const {
  const auto it = std::find(ordering.begin(), ordering.end(), layer);
  if (it == ordering.end()) throw InvalidArgument("layer " + std::to_string(layer) + " not in summary");
  return static_cast<std::size_t>(it - ordering.begin());
}

LayerFisherSummary aggregate_scores(const FisherEstimate& estimate, std::span<const LayerInfo> layers) {
  LayerFisherSummary s;
  s.model_fingerprint = estimate.model_fingerprint;
  for (const auto& l : layers) s.layers.push_back({l.id, l.name, 0.0, 0.0, 0});
  for (std::size_t p = 0; p < estimate.scores.size(); ++p) {
    const LayerId id = estimate.param_layers.at(p);
    if (id >= s.layers.size()) throw InvalidArgument("score tensor '" + estimate.param_names.at(p) + "' has unknown layer");
    auto& ls = s.layers[id];
    for (double v : estimate.scores[p].values()) ls.sum += v;
    ls.count += estimate.scores[p].size();
  }
  for (auto& ls : s.layers) ls.mean = ls.count ? ls.sum / static_cast<double>(ls.count) : 0.0;
  for (const auto& ls : s.layers) s.ordering.push_back(ls.layer);
  std::stable_sort(s.ordering.begin(), s.ordering.end(), [&](LayerId a, LayerId b) {
    if (s.layers[a].mean != s.layers[b].mean) return s.layers[a].mean < s.layers[b].mean;
    return a < b;
  });
  return s;
}

LayerFisherSummary aggregate_by_layer(const FisherEstimate& estimate, const Model& model) {
  check_fingerprint(model.fingerprint(), estimate.model_fingerprint);
  return aggregate_scores(estimate, model.layers());
}

PerturbationMask top_fraction_mask(const FisherEstimate& estimate, double fraction, ScoreEnd end) {
  const auto flat = estimate.flatten();
  const std::size_t k = selection_count(fraction, flat.size());
  std::vector<std::size_t> idx(flat.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (flat[a] != flat[b]) return end == ScoreEnd::highest ? flat[a] > flat[b] : flat[a] < flat[b];
    return a < b;
  };
  if (k < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  PerturbationMask m{std::vector<std::uint8_t>(flat.size(), 0),
                     end == ScoreEnd::highest ? MaskSource::fisher_top : MaskSource::fisher_bottom, fraction, 0};
  for (std::size_t i = 0; i < k; ++i) m.flags[idx[i]] = 1;
  return m;
}

double cross_correlation(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double smoothed_kl(std::span<const double> p, std::span<const double> q) {
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i] + kKlSmoothing;
    sq += q[i] + kKlSmoothing;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + kKlSmoothing) / sp;
    const double qi = (q[i] + kKlSmoothing) / sq;
    kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

StabilityReport stability_metrics(const FisherEstimate& full, const FisherEstimate& sub,
                                  std::span<const double> fractions) {
  check_fingerprint(full.model_fingerprint, sub.model_fingerprint);
  const auto a = full.flatten();
  const auto b = sub.flatten();
  std::vector<LayerId> layer_of;
  layer_of.reserve(a.size());
  for (std::size_t p = 0; p < full.scores.size(); ++p)
    layer_of.insert(layer_of.end(), full.scores[p].size(), full.param_layers[p]);
  const LayerId n_layers = layer_of.empty() ? 0 : *std::max_element(layer_of.begin(), layer_of.end()) + 1;

  StabilityReport report;
  for (double fraction : fractions) {
    const auto mask = top_fraction_mask(full, fraction, ScoreEnd::highest);
    if (mask.popcount() == 0)
      throw InvalidArgument("fraction " + std::to_string(fraction) + " selects no coordinates");
    std::vector<std::vector<double>> la(n_layers), lb(n_layers);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!mask[i]) continue;
      la[layer_of[i]].push_back(a[i]);
      lb[layer_of[i]].push_back(b[i]);
    }
    StabilityRow row;
    row.fraction = fraction;
    std::vector<double> corr, kl;
    for (LayerId l = 0; l < n_layers; ++l) {
      if (la[l].size() < 2) continue;
      LayerStability ls{l, la[l].size(), cross_correlation(la[l], lb[l]), smoothed_kl(la[l], lb[l])};
      corr.push_back(ls.cross_correlation);
      kl.push_back(ls.kl);
      row.layers.push_back(ls);
    }
    if (row.layers.empty())
      throw InvalidArgument("fraction " + std::to_string(fraction) + " leaves no layer with two selected coordinates");
    row.correlation_mean = stats::mean(corr);
    row.correlation_std = stats::stddev(corr);
    row.kl_mean = stats::mean(kl);
    row.kl_std = stats::stddev(kl);
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

void write_csv(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::filesystem::path> export_score_distributions(const FisherEstimate& estimate,
                                                              const LayerFisherSummary& summary,
                                                              const std::filesystem::path& out_dir) {
  check_fingerprint(estimate.model_fingerprint, summary.model_fingerprint);
  std::filesystem::create_directories(out_dir);
  auto normalise = [](std::vector<double>& v) {
    const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    if (mx > 0.0)
      for (double& x : v) x /= mx;
  };

  auto params = estimate.flatten();
  normalise(params);
  std::sort(params.begin(), params.end());
  std::string a = "rank,score\n";
  for (std::size_t i = 0; i < params.size(); ++i) a += std::to_string(i) + "," + fmt(params[i]) + "\n";

  std::vector<double> layer_means;
  for (const auto& l : summary.layers) layer_means.push_back(l.mean);
  normalise(layer_means);
  std::string b = "rank,layer,score\n";
  for (std::size_t i = 0; i < summary.ordering.size(); ++i) {
    const LayerId id = summary.ordering[i];
    b += std::to_string(i) + "," + summary.layers[id].name + "," + fmt(layer_means[id]) + "\n";
  }
  std::string c = "position,layer,score\n";
  for (std::size_t i = 0; i < summary.layers.size(); ++i)
    c += std::to_string(i) + "," + summary.layers[i].name + "," + fmt(layer_means[i]) + "\n";

  std::vector<std::filesystem::path> paths{out_dir / "param_scores_sorted.csv", out_dir / "layer_scores_sorted.csv",
                                           out_dir / "layer_scores_unsorted.csv"};
  write_csv(paths[0], a);
  write_csv(paths[1], b);
  write_csv(paths[2], c);
  return paths;
}

std::vector<double> hessian_diag_fd(const Model& model, Batch dataset, double step) {
  if (dataset.empty()) throw InvalidArgument("Hessian estimation needs a nonempty dataset");
  return finite_difference_hessian_diagonal(model.forward(Objective::negative_log_likelihood), dataset,
                                            model.params(), step);
}

void save_fisher(const FisherEstimate& estimate, const std::filesystem::path& path) {
  BlobFile file;
  file.kind = "fisher";
  file.version = kFisherFileVersion;
  file.manifest["model_fingerprint"] = estimate.model_fingerprint;
  file.manifest["data_digest"] = estimate.data_digest;
  file.manifest["sample_count"] = estimate.sample_count;
  file.manifest["seed"] = estimate.seed;
  file.manifest["param_layers"] = estimate.param_layers;
  file.names = estimate.param_names;
  file.blocks = estimate.scores;
  write_blob_file(path, file);
}

FisherEstimate load_fisher(const std::filesystem::path& path) {
  BlobFile file = read_blob_file(path, "fisher", kFisherFileVersion);
  FisherEstimate est;
  try {
    est.model_fingerprint = file.manifest.at("model_fingerprint").get<std::string>();
    est.data_digest = file.manifest.at("data_digest").get<std::string>();
    est.sample_count = file.manifest.at("sample_count").get<std::size_t>();
    est.seed = file.manifest.at("seed").get<std::uint64_t>();
    est.param_layers = file.manifest.at("param_layers").get<std::vector<LayerId>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("'" + path.string() + "': malformed Fisher manifest (" + e.what() + ")");
  }
  if (est.param_layers.size() != file.blocks.size() || est.sample_count == 0)
    throw CorruptFile("'" + path.string() + "': inconsistent Fisher manifest");
  for (const auto& b : file.blocks)
    for (double v : b.values())
      if (v < 0.0) throw CorruptFile("'" + path.string() + "': negative Fisher score");
  est.param_names = std::move(file.names);
  est.scores = std::move(file.blocks);
  return est;
}

}  // namespace fisherscope
