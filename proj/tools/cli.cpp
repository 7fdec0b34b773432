#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fisherscope/checkpoint.hpp"
#include "fisherscope/error.hpp"
#include "fisherscope/fisher.hpp"
#include "fisherscope/harness.hpp"
#include "fisherscope/hash.hpp"
#include "fisherscope/landscape.hpp"
#include "fisherscope/regularize.hpp"
#include "fisherscope/rng.hpp"
#include "fisherscope/stats.hpp"

namespace fisherscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

struct DataOpts {
  std::string data;
  std::size_t size = 0;
  std::uint64_t data_seed = 0;
  std::size_t window = 16;
  std::size_t dim = 10;
  std::size_t parity_bits = 3;
  std::string task = "classification";
  std::string label_column = "label";
};

struct TrainOpts {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr = 1e-3;
};

struct ModelOpts {
  std::string kind = "auto";
  std::size_t depth = 3;
  std::size_t width = 64;
  std::size_t heads = 2;
  std::string activation = "relu";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Global seed; every random stream derives from it")->capture_default_str();
  app->add_option("--jobs", c.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "Output directory (default: $FISHERSCOPE_OUT_DIR/<command>)");
}

void add_data(CLI::App* app, DataOpts& d, bool required = true) {
  auto* opt = app->add_option("--data", d.data,
                              "synthetic:parity, synthetic:regression, a .csv table, or a text corpus file");
  if (required) opt->required();
  app->add_option("--size", d.size, "Samples to generate or read (0: all rows/windows)")->capture_default_str();
  app->add_option("--data-seed", d.data_seed, "Seed of synthetic data generation")->capture_default_str();
  app->add_option("--window", d.window, "Context length of corpus windows")->capture_default_str();
  app->add_option("--dim", d.dim, "Feature count of synthetic data")->capture_default_str();
  app->add_option("--parity-bits", d.parity_bits, "Parity bits of synthetic:parity")->capture_default_str();
  app->add_option("--task", d.task, "Task of a .csv table: classification or regression")->capture_default_str();
  app->add_option("--label-column", d.label_column, "Label column of a .csv table")->capture_default_str();
}

void add_train(CLI::App* app, TrainOpts& t) {
  app->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--batch-size", t.batch_size, "Minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--lr", t.lr, "Peak learning rate")->capture_default_str()->check(CLI::PositiveNumber);
}

DatasetSpec data_spec(const DataOpts& d) {
  DatasetSpec s;
  s.seed = d.data_seed;
  s.window = d.window;
  s.dim = d.dim;
  s.parity_bits = d.parity_bits;
  s.label_column = d.label_column;
  if (d.data == "synthetic:parity") {
    s.source = DataSource::synthetic_parity;
    s.task = TaskKind::classification;
    s.size = d.size ? d.size : 1000;
  } else if (d.data == "synthetic:regression") {
    s.source = DataSource::synthetic_regression;
    s.task = TaskKind::regression;
    s.size = d.size ? d.size : 1000;
  } else {
    s.path = d.data;
    s.size = d.size;
    if (!fs::exists(s.path)) throw IoError("--data: file '" + d.data + "' does not exist");
    if (s.path.extension() == ".csv") {
      s.source = DataSource::tabular_csv;
      s.task = parse_task_kind(d.task);
    } else {
      s.source = DataSource::char_corpus;
      s.task = TaskKind::language_modeling;
    }
  }
  return s;
}

json to_json(const DatasetSpec& s) {
  json j{{"source", to_string(s.source)}, {"task", to_string(s.task)}, {"size", s.size}, {"seed", s.seed}};
  switch (s.source) {
    case DataSource::synthetic_parity:
      j["dim"] = s.dim;
      j["parity_bits"] = s.parity_bits;
      break;
    case DataSource::synthetic_regression:
      j["dim"] = s.dim;
      break;
    case DataSource::char_corpus:
      j["path"] = s.path.string();
      j["window"] = s.window;
      break;
    case DataSource::tabular_csv:
      j["path"] = s.path.string();
      j["label_column"] = s.label_column;
      break;
  }
  return j;
}

json to_json(const TrainOpts& t) { return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}}; }

TrainConfig train_config(const TrainOpts& t) {
  TrainConfig c;
  c.epochs = t.epochs;
  c.batch_size = t.batch_size;
  c.learning_rate = t.lr;
  return c;
}

fs::path out_dir(const Common& c, const std::string& command) {
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv("FISHERSCOPE_OUT_DIR");
  return fs::path(root && *root ? root : "fisherscope_out") / command;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return Digest().bytes(bytes.data(), bytes.size()).hex();
}

std::string num(double v, const char* fmt = "%.17g") {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Writes manifest.json describing one command invocation.
void write_manifest(const fs::path& dir, const std::string& command, const Common& common, json config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, json extra = {}) {
  json m;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["seed"] = common.seed;
  m["jobs"] = common.jobs;
  m["config"] = std::move(config);
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = file_digest(p);
  m["inputs"] = in;
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(fs::relative(p, dir).string());
  m["outputs"] = outs;
  if (!extra.is_null()) m["results"] = std::move(extra);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void check_task(const Model& model, const Dataset& data) {
  const auto& c = model.config();
  if (c.task != data.task)
    throw InvalidArgument("--data: model task is " + std::string(to_string(c.task)) + " but the data is " +
                          std::string(to_string(data.task)));
  if (c.kind == ModelKind::mlp && c.input_dim != data.input_dim)
    throw ShapeError("input", "--data has " + std::to_string(data.input_dim) + " features, model expects " +
                                  std::to_string(c.input_dim));
  if (c.kind == ModelKind::transformer_encoder && data.input_dim > c.max_seq_len)
    throw ShapeError("embed", "--data windows of " + std::to_string(data.input_dim) + " exceed max_seq_len " +
                                  std::to_string(c.max_seq_len));
  if (c.output_dim != data.output_dim && c.task != TaskKind::regression)
    throw ShapeError("head", "--data has " + std::to_string(data.output_dim) + " classes, model head has " +
                                 std::to_string(c.output_dim));
}

FisherEstimate load_fisher_for(const fs::path& path, const Model& model) {
  FisherEstimate est = load_fisher(path);
  if (est.model_fingerprint != model.fingerprint())
    throw FingerprintMismatch(model.fingerprint() + " (--model)", est.model_fingerprint + " (--fisher)");
  return est;
}

std::vector<double> percent_list(const std::vector<double>& values, const char* flag) {
  std::vector<double> out;
  for (double v : values) {
    if (!(v > 0.0 && v <= 100.0)) throw InvalidArgument(std::string(flag) + ": percentages must lie in (0, 100]");
    out.push_back(v / 100.0);
  }
  return out;
}

std::pair<double, double> parse_range(const std::string& text, const char* flag) {
  const auto colon = text.find(':');
  try {
    if (colon != std::string::npos) {
      const double lo = std::stod(text.substr(0, colon)), hi = std::stod(text.substr(colon + 1));
      if (lo < hi) return {lo, hi};
    }
  } catch (const std::exception&) {
  }
  throw InvalidArgument(std::string(flag) + ": expected LO:HI with LO < HI, got '" + text + "'");
}

// ---------------------------------------------------------------- commands

struct PretrainCmd {
  Common common;
  DataOpts data;
  ModelOpts model;
  TrainOpts train{20, 32, 3e-3};
};

int pretrain_cmd(const PretrainCmd& o, std::ostream& out) {
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  ModelConfig mc;
  mc.task = data.task;
  mc.depth = o.model.depth;
  mc.width = o.model.width;
  mc.heads = o.model.heads;
  mc.activation = parse_activation(o.model.activation);
  mc.output_dim = data.output_dim;
  const std::string kind = o.model.kind == "auto"
                               ? (data.task == TaskKind::language_modeling ? "transformer_encoder" : "mlp")
                               : o.model.kind;
  mc.kind = parse_model_kind(kind);
  if (mc.kind == ModelKind::mlp) {
    mc.input_dim = data.input_dim;
  } else {
    mc.vocab_size = kByteVocab;
    mc.max_seq_len = data.input_dim;
    if (data.task != TaskKind::language_modeling)
      throw InvalidArgument("--kind transformer_encoder needs token data (a text corpus)");
  }

  auto result = pretrain(mc, data, train_config(o.train), o.common.seed);
  const fs::path dir = out_dir(o.common, "pretrain");
  fs::create_directories(dir);
  const fs::path ckpt = dir / "model.ckpt", record = dir / "pretrain.json";
  save_checkpoint(result.model, ckpt, {o.common.seed, "pretrain on " + std::string(to_string(spec.source))});
  write_text(record, to_json(result.record).dump(2) + "\n");
  std::vector<fs::path> inputs;
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "pretrain", o.common,
                 {{"data", to_json(spec)}, {"model", config_to_json(mc)}, {"train", to_json(o.train)}}, inputs,
                 {ckpt, record},
                 {{"model_fingerprint", result.model.fingerprint()},
                  {"dev_primary", result.record.metrics.primary},
                  {"failed", result.record.failed}});
  out << "pretrain: dev primary metric " << num(result.record.metrics.primary) << ", model " << ckpt.string()
      << "\n";
  if (result.record.failed) out << "pretrain: warning: " << result.record.failure << "\n";
  if (result.record.failed_step < 0) return 0;
  throw Error("pretrain diverged at step " + std::to_string(result.record.failed_step) + ": " +
              result.record.failure);
}

struct FisherEstimateCmd {
  Common common;
  std::string model;
  DataOpts data;
  std::size_t samples = 0;
};

int fisher_estimate_cmd(const FisherEstimateCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  check_task(model, data);
  const std::size_t n = o.samples ? o.samples : data.size();
  const auto est = estimate_empirical_fisher(model, data.samples, n, o.common.seed, o.common.jobs);
  const auto summary = aggregate_by_layer(est, model);

  const fs::path dir = out_dir(o.common, "fisher-estimate");
  fs::create_directories(dir);
  const fs::path file = dir / "fisher.bin", layers = dir / "layer_scores.csv";
  save_fisher(est, file);
  std::string csv = "layer,name,mean,sum,count,rank\n";
  for (const auto& l : summary.layers)
    csv += std::to_string(l.layer) + "," + l.name + "," + num(l.mean) + "," + num(l.sum) + "," +
           std::to_string(l.count) + "," + std::to_string(summary.rank_of(l.layer)) + "\n";
  write_text(layers, csv);
  std::vector<fs::path> inputs{o.model};
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "fisher estimate", o.common, {{"data", to_json(spec)}, {"samples", n}}, inputs,
                 {file, layers},
                 {{"model_fingerprint", est.model_fingerprint}, {"data_digest", est.data_digest}});
  out << "fisher estimate: " << n << " samples, " << est.total_size() << " coordinates -> " << file.string()
      << "\n";
  return 0;
}

struct StabilityCmd {
  Common common;
  std::string model;
  DataOpts data;
  std::size_t samples = 0;
  std::vector<double> topk{5, 1, 0.5, 0.25};
  std::vector<double> subsample{33, 10, 1, 0.1};
};

int stability_cmd(const StabilityCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  check_task(model, data);
  const auto topk = percent_list(o.topk, "--topk");
  const auto subs = percent_list(o.subsample, "--subsample");
  const std::size_t n = o.samples ? o.samples : data.size();
  const auto full = estimate_empirical_fisher(model, data.samples, n, derive_seed(o.common.seed, stream_id("full")),
                                              o.common.jobs);

  std::string csv = "subsample_percent,topk_percent,correlation_mean,correlation_std,kl_mean,kl_std,layers\n";
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(subs[i] * static_cast<double>(n))));
    const auto sub = estimate_empirical_fisher(model, data.samples, m,
                                               derive_seed(o.common.seed, stream_id("subsample"), i), o.common.jobs);
    const auto report = stability_metrics(full, sub, topk);
    for (std::size_t k = 0; k < topk.size(); ++k) {
      const auto& row = report.rows[k];
      csv += num(o.subsample[i], "%g") + "," + num(o.topk[k], "%g") + "," + num(row.correlation_mean) + "," +
             num(row.correlation_std) + "," + num(row.kl_mean) + "," + num(row.kl_std) + "," +
             std::to_string(row.layers.size()) + "\n";
    }
    out << "fisher stability: " << num(o.subsample[i], "%g") << "% (" << m << " samples) done\n";
  }
  const fs::path dir = out_dir(o.common, "fisher-stability");
  fs::create_directories(dir);
  const fs::path table = dir / "stability.csv";
  write_text(table, csv);
  std::vector<fs::path> inputs{o.model};
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "fisher stability", o.common,
                 {{"data", to_json(spec)}, {"samples", n}, {"topk_percent", o.topk}, {"subsample_percent", o.subsample}},
                 inputs, {table});
  return 0;
}

struct ExportCmd {
  Common common;
  std::string model;
  std::string fisher;
};

int export_cmd(const ExportCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const auto est = load_fisher_for(o.fisher, model);
  const fs::path dir = out_dir(o.common, "fisher-export-dist");
  const auto files = export_score_distributions(est, aggregate_by_layer(est, model), dir);
  write_manifest(dir, "fisher export-dist", o.common, json::object(), {o.model, o.fisher}, files);
  out << "fisher export-dist: wrote " << files.size() << " tables to " << dir.string() << "\n";
  return 0;
}

struct ScanCmd {
  Common common;
  std::string model;
  std::string fisher;
  DataOpts data;
  std::string select = "top";
  double fraction = 0.5;
  std::size_t grid = 25;
  std::string alpha_range = "-1:1";
  std::string beta_range;
  std::size_t dims = 2;
  std::string normalization = "filter";
};

int scan_cmd(const ScanCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  check_task(model, data);
  const std::size_t total = model.params().total_size();
  PerturbationMask mask;
  if (o.select == "top" || o.select == "bottom") {
    if (o.fisher.empty()) throw InvalidArgument("--select " + o.select + " needs --fisher");
    const auto est = load_fisher_for(o.fisher, model);
    mask = top_fraction_mask(est, o.fraction, o.select == "top" ? ScoreEnd::highest : ScoreEnd::lowest);
  } else if (o.select == "random") {
    mask = random_mask(total, o.fraction, derive_seed(o.common.seed, stream_id("mask")));
  } else if (o.select == "all") {
    mask = full_mask(total);
  } else {
    throw InvalidArgument("--select: expected top, bottom, random or all, got '" + o.select + "'");
  }
  if (o.grid < 2 || o.grid % 2 == 0) throw InvalidArgument("--grid: need an odd point count >= 3 so 0 is on the axis");
  const auto [alo, ahi] = parse_range(o.alpha_range, "--alpha-range");
  const auto [blo, bhi] = parse_range(o.beta_range.empty() ? o.alpha_range : o.beta_range, "--beta-range");
  if (alo > 0 || ahi < 0 || blo > 0 || bhi < 0) throw InvalidArgument("axis ranges must contain 0");
  auto axis = [&](double lo, double hi) {
    auto a = linspace(lo, hi, o.grid);
    if (lo == -hi) a[o.grid / 2] = 0.0;
    else a.push_back(0.0), std::sort(a.begin(), a.end()), a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
  };
  const auto alphas = axis(alo, ahi);
  const auto norm = parse_normalization(o.normalization);
  const auto delta = random_direction(model, derive_seed(o.common.seed, stream_id("delta")), norm);
  LandscapeGrid grid;
  if (o.dims == 1) {
    grid = scan_1d(model, delta, mask, alphas, data.samples, o.common.jobs);
  } else if (o.dims == 2) {
    const auto eta = random_direction(model, derive_seed(o.common.seed, stream_id("eta")), norm);
    grid = scan_2d(model, delta, eta, mask, alphas, axis(blo, bhi), data.samples, o.common.jobs);
  } else {
    throw InvalidArgument("--dims: expected 1 or 2");
  }
  const fs::path dir = out_dir(o.common, "landscape-scan");
  fs::create_directories(dir);
  const fs::path file = dir / "grid.csv";
  export_grid(grid, file);
  const double radius = std::max({std::abs(alo), std::abs(ahi), std::abs(blo), std::abs(bhi)});
  const double sharp = sharpness_index(grid, radius);
  std::vector<fs::path> inputs{o.model};
  if (!o.fisher.empty()) inputs.push_back(o.fisher);
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "landscape scan", o.common,
                 {{"data", to_json(spec)},
                  {"select", o.select},
                  {"fraction", o.fraction},
                  {"grid", o.grid},
                  {"alpha_range", o.alpha_range},
                  {"beta_range", o.beta_range.empty() ? o.alpha_range : o.beta_range},
                  {"dims", o.dims},
                  {"normalization", o.normalization}},
                 inputs, {file, fs::path(file.string() + ".json")},
                 {{"base_loss", grid.base_loss},
                  {"perturbed_coordinates", mask.popcount()},
                  {"sharpness_index", std::isfinite(sharp) ? json(sharp) : json(nullptr)},
                  {"sharpness_radius", radius}});
  out << "landscape scan: base loss " << num(grid.base_loss) << ", sharpness " << num(sharp) << " -> "
      << file.string() << "\n";
  return 0;
}

struct ScheduleCmd {
  Common common;
  std::string model;
  std::string fisher;
  std::string mode = "bounded";
  double p_lower = kDefaultPLower;
  double p_upper = kDefaultPUpper;
};

int schedule_cmd(const ScheduleCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const auto est = load_fisher_for(o.fisher, model);
  const auto schedule = build_guided_schedule(aggregate_by_layer(est, model), model, o.p_lower, o.p_upper,
                                              parse_schedule_mode(o.mode));
  const fs::path dir = out_dir(o.common, "schedule-build");
  fs::create_directories(dir);
  const fs::path file = dir / "schedule.json";
  save_schedule(schedule, file);
  write_manifest(dir, "schedule build", o.common, {{"mode", o.mode}, {"p_lower", o.p_lower}, {"p_upper", o.p_upper}},
                 {o.model, o.fisher}, {file});
  for (const auto& s : schedule.sites) out << "  " << s.name << " keep " << num(s.p) << "\n";
  return 0;
}

DropoutPlan plan_for(Regularizer r, double p_drop, const std::string& schedule_path, const Model& model) {
  const std::size_t sites = model.sites().size();
  switch (r) {
    case Regularizer::none: return DropoutPlan::uniform(Regularizer::none, 1.0, sites);
    case Regularizer::standard: return DropoutPlan::uniform(Regularizer::standard, keep_from_drop_rate(p_drop), sites);
    case Regularizer::gaussian: return DropoutPlan::uniform(Regularizer::gaussian, p_drop, sites);
    case Regularizer::guided: {
      if (schedule_path.empty()) throw InvalidArgument("--regularizer guided needs --schedule");
      const auto schedule = load_schedule(schedule_path);
      if (schedule.fisher_fingerprint != model.fingerprint())
        throw FingerprintMismatch(model.fingerprint() + " (--model)", schedule.fisher_fingerprint + " (--schedule)");
      return DropoutPlan::from_schedule(schedule);
    }
  }
  throw InvalidArgument("unknown regularizer");
}

struct TrainCmd {
  Common common;
  std::string model;
  DataOpts data;
  TrainOpts train;
  std::string regularizer = "standard";
  double p_drop = 0.1;
  std::string schedule;
  double paucity = 1.0;
  std::size_t restart = 0;
};

int train_cmd(const TrainCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  check_task(model, data);
  const auto reg = parse_regularizer(o.regularizer);
  const DropoutPlan plan = plan_for(reg, o.p_drop, o.schedule, model);
  TrainConfig tc = train_config(o.train);
  tc.data_fraction = o.paucity;
  const std::uint64_t rs = restart_seed(o.common.seed, o.restart);
  const Split split = split_dataset(data, rs, tc.train_fraction, o.paucity);
  RunRecord rec = train(init_output_head(model, derive_seed(rs, stream_id("head"))), plan, split, tc,
                        derive_seed(rs, stream_id("train")));
  rec.regularizer = o.regularizer;
  rec.restart = o.restart;
  rec.restart_seed = rs;
  const fs::path dir = out_dir(o.common, "train");
  fs::create_directories(dir);
  const fs::path file = dir / "run.json";
  write_text(file, to_json(rec).dump(2) + "\n");
  std::vector<fs::path> inputs{o.model};
  if (!o.schedule.empty()) inputs.push_back(o.schedule);
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "train", o.common,
                 {{"data", to_json(spec)},
                  {"train", to_json(o.train)},
                  {"regularizer", o.regularizer},
                  {"p_drop", o.p_drop},
                  {"paucity", o.paucity},
                  {"restart", o.restart}},
                 inputs, {file});
  out << "train: " << o.regularizer << " primary " << num(rec.metrics.primary)
      << (rec.failed ? " (failed: " + rec.failure + ")" : "") << " in " << rec.wall_seconds << " s\n";
  return 0;
}

struct SweepCmd {
  Common common;
  std::string model;
  DataOpts data;
  TrainOpts train;
  std::vector<std::string> regularizers{"standard", "gaussian", "guided"};
  double p_drop = 0.1;
  std::string schedule;
  std::size_t restarts = 5;
  std::vector<double> paucity{1.0, 0.75, 0.5, 0.25, 0.1};
};

int sweep_cmd(const SweepCmd& o, std::ostream& out) {
  const Model model = load_checkpoint(o.model).model;
  const DatasetSpec spec = data_spec(o.data);
  const Dataset data = make_dataset(spec);
  check_task(model, data);
  std::vector<PlanSpec> plans;
  for (const auto& r : o.regularizers)
    plans.push_back({r, plan_for(parse_regularizer(r), o.p_drop, o.schedule, model)});
  SweepConfig sc;
  sc.train = train_config(o.train);
  sc.fractions = o.paucity;
  sc.restarts = o.restarts;
  sc.seed = o.common.seed;
  sc.jobs = o.common.jobs;
  const auto report = sweep(model, data, plans, sc);
  const fs::path dir = out_dir(o.common, "sweep");
  write_sweep(report, dir);
  std::vector<fs::path> inputs{o.model};
  if (!o.schedule.empty()) inputs.push_back(o.schedule);
  if (!spec.path.empty()) inputs.push_back(spec.path);
  write_manifest(dir, "sweep", o.common,
                 {{"data", to_json(spec)},
                  {"train", to_json(o.train)},
                  {"regularizers", o.regularizers},
                  {"p_drop", o.p_drop},
                  {"restarts", o.restarts},
                  {"paucity", o.paucity}},
                 inputs, {dir / "summary.json", dir / "sweep.csv"});
  double wall = 0.0;
  for (const auto& r : report.runs) wall += r.wall_seconds;
  out << "sweep: " << report.runs.size() << " runs, " << wall << " s of training -> " << dir.string() << "\n";
  return 0;
}

struct ReportCmd {
  Common common;
  std::string sweep_dir;
};

int report_cmd(const ReportCmd& o, std::ostream& out) {
  const fs::path summary_path = fs::path(o.sweep_dir) / "summary.json";
  std::ifstream in(summary_path);
  if (!in) throw IoError("--sweep: cannot open '" + summary_path.string() + "'");
  json summary;
  try {
    summary = json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptFile("'" + summary_path.string() + "': " + e.what());
  }
  std::string csv = "regularizer,fraction,mean,max,q1,q3,iqr,failed_runs,max_mean\n";
  out << "regularizer     fraction   Max_Mean          IQR      failed\n";
  for (const auto& c : summary.at("cells")) {
    auto get = [&](const char* k) { return c.at(k).is_null() ? std::nan("") : c.at(k).get<double>(); };
    const double mean = get("mean"), max = get("max");
    char cell[64];
    std::snprintf(cell, sizeof cell, "%.2f_{%.2f}", 100 * max, 100 * mean);
    csv += c.at("regularizer").get<std::string>() + "," + num(c.at("fraction").get<double>(), "%g") + "," + num(mean) +
           "," + num(max) + "," + num(get("q1")) + "," + num(get("q3")) + "," + num(get("iqr")) + "," +
           std::to_string(c.at("failed_runs").get<std::size_t>()) + "," + cell + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-15s %-10g %-17s %-8.4f %zu\n", c.at("regularizer").get<std::string>().c_str(),
                  c.at("fraction").get<double>(), cell, get("iqr"), c.at("failed_runs").get<std::size_t>());
    out << line;
  }
  const fs::path dir = out_dir(o.common, "report");
  fs::create_directories(dir);
  const fs::path file = dir / "report.csv";
  write_text(file, csv);
  write_manifest(dir, "report", o.common, {{"sweep", o.sweep_dir}}, {summary_path}, {file});
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fisher-information tools for toy networks: estimation, landscapes, guided dropout"};
  app.set_config("--config", "", "TOML or INI file of option values; command-line flags win");
  app.require_subcommand(1);

  PretrainCmd pre;
  auto* pre_app = app.add_subcommand("pretrain", "Train a toy model from scratch and save a checkpoint");
  add_common(pre_app, pre.common);
  add_data(pre_app, pre.data);
  add_train(pre_app, pre.train);
  pre_app->add_option("--kind", pre.model.kind, "mlp, transformer_encoder, or auto")->capture_default_str();
  pre_app->add_option("--depth", pre.model.depth, "Hidden layers or encoder blocks")->capture_default_str();
  pre_app->add_option("--width", pre.model.width, "Hidden or model width")->capture_default_str();
  pre_app->add_option("--heads", pre.model.heads, "Attention heads")->capture_default_str();
  pre_app->add_option("--activation", pre.model.activation, "relu or gelu")->capture_default_str();

  auto* fisher_app = app.add_subcommand("fisher", "Empirical Fisher estimation and analysis");
  fisher_app->require_subcommand(1);
  FisherEstimateCmd fe;
  auto* fe_app = fisher_app->add_subcommand("estimate", "Estimate the diagonal empirical Fisher");
  add_common(fe_app, fe.common);
  fe_app->add_option("--model", fe.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  add_data(fe_app, fe.data);
  fe_app->add_option("--samples", fe.samples, "Samples drawn without replacement (0: all)")->capture_default_str();

  StabilityCmd st;
  auto* st_app = fisher_app->add_subcommand("stability", "Compare sub-sample estimates with the full estimate");
  add_common(st_app, st.common);
  st_app->add_option("--model", st.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  add_data(st_app, st.data);
  st_app->add_option("--samples", st.samples, "Size of the full estimate (0: all)")->capture_default_str();
  st_app->add_option("--topk", st.topk, "Top-k percentages")->delimiter(',')->capture_default_str();
  st_app->add_option("--subsample", st.subsample, "Sub-sample percentages")->delimiter(',')->capture_default_str();

  ExportCmd ex;
  auto* ex_app = fisher_app->add_subcommand("export-dist", "Export sorted and unsorted score distributions");
  add_common(ex_app, ex.common);
  ex_app->add_option("--model", ex.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  ex_app->add_option("--fisher", ex.fisher, "Fisher estimate file")->required()->check(CLI::ExistingFile);

  auto* land_app = app.add_subcommand("landscape", "Loss-landscape scans");
  land_app->require_subcommand(1);
  ScanCmd sc;
  auto* sc_app = land_app->add_subcommand("scan", "Masked 1-D or 2-D scan along filter-normalised directions");
  add_common(sc_app, sc.common);
  sc_app->add_option("--model", sc.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  sc_app->add_option("--fisher", sc.fisher, "Fisher estimate file (for top/bottom)")->check(CLI::ExistingFile);
  add_data(sc_app, sc.data);
  sc_app->add_option("--select", sc.select, "top, bottom, random or all")->capture_default_str();
  sc_app->add_option("--fraction", sc.fraction, "Fraction of coordinates perturbed")->capture_default_str();
  sc_app->add_option("--grid", sc.grid, "Points per axis")->capture_default_str();
  sc_app->add_option("--alpha-range", sc.alpha_range, "LO:HI of the first axis")->capture_default_str();
  sc_app->add_option("--beta-range", sc.beta_range, "LO:HI of the second axis (default: alpha range)");
  sc_app->add_option("--dims", sc.dims, "1 or 2")->capture_default_str();
  sc_app->add_option("--normalization", sc.normalization, "filter or none")->capture_default_str();

  auto* sched_app = app.add_subcommand("schedule", "Guided dropout schedules");
  sched_app->require_subcommand(1);
  ScheduleCmd sb;
  auto* sb_app = sched_app->add_subcommand("build", "Build a guided dropout schedule from a Fisher estimate");
  add_common(sb_app, sb.common);
  sb_app->add_option("--model", sb.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  sb_app->add_option("--fisher", sb.fisher, "Fisher estimate file")->required()->check(CLI::ExistingFile);
  sb_app->add_option("--mode", sb.mode, "bounded or paper-literal")->capture_default_str();
  sb_app->add_option("--p-lower", sb.p_lower, "Lowest retention probability")->capture_default_str();
  sb_app->add_option("--p-upper", sb.p_upper, "Highest retention probability")->capture_default_str();

  TrainCmd tr;
  auto* tr_app = app.add_subcommand("train", "Fine-tune once with a fresh output head");
  add_common(tr_app, tr.common);
  tr_app->add_option("--model", tr.model, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  add_data(tr_app, tr.data);
  add_train(tr_app, tr.train);
  tr_app->add_option("--regularizer", tr.regularizer, "none, standard, gaussian or guided")->capture_default_str();
  tr_app->add_option("--p-drop", tr.p_drop, "Drop rate of standard and gaussian dropout")->capture_default_str();
  tr_app->add_option("--schedule", tr.schedule, "Schedule file for guided dropout")->check(CLI::ExistingFile);
  tr_app->add_option("--paucity", tr.paucity, "Fraction of the training split kept")->capture_default_str();
  tr_app->add_option("--restart", tr.restart, "Restart index")->capture_default_str();

  SweepCmd sw;
  auto* sw_app = app.add_subcommand("sweep", "Regularizer x paucity x restart fine-tuning sweep");
  add_common(sw_app, sw.common);
  sw_app->add_option("--model", sw.model, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  add_data(sw_app, sw.data);
  add_train(sw_app, sw.train);
  sw_app->add_option("--regularizer", sw.regularizers, "Regularizers")->delimiter(',')->capture_default_str();
  sw_app->add_option("--p-drop", sw.p_drop, "Drop rate of standard and gaussian dropout")->capture_default_str();
  sw_app->add_option("--schedule", sw.schedule, "Schedule file for guided dropout")->check(CLI::ExistingFile);
  sw_app->add_option("--restarts", sw.restarts, "Restarts per cell")->capture_default_str()->check(CLI::PositiveNumber);
  sw_app->add_option("--paucity", sw.paucity, "Training fractions")->delimiter(',')->capture_default_str();

  ReportCmd rp;
  auto* rp_app = app.add_subcommand("report", "Summarise a sweep as Max_Mean table rows");
  add_common(rp_app, rp.common);
  rp_app->add_option("--sweep", rp.sweep_dir, "Sweep output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (pre_app->parsed()) return pretrain_cmd(pre, out);
    if (fe_app->parsed()) return fisher_estimate_cmd(fe, out);
    if (st_app->parsed()) return stability_cmd(st, out);
    if (ex_app->parsed()) return export_cmd(ex, out);
    if (sc_app->parsed()) return scan_cmd(sc, out);
    if (sb_app->parsed()) return schedule_cmd(sb, out);
    if (tr_app->parsed()) return train_cmd(tr, out);
    if (sw_app->parsed()) return sweep_cmd(sw, out);
    if (rp_app->parsed()) return report_cmd(rp, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace fisherscope::cli
