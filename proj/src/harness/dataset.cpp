#include "fisherscope/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fisherscope/error.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

namespace {

Dataset parity(const DatasetSpec& spec) {
  if (spec.parity_bits == 0 || spec.parity_bits > spec.dim)
    throw InvalidArgument("parity_bits must lie in [1, dim]");
  Dataset d{{}, TaskKind::classification, spec.dim, 2};
  Rng rng(derive_seed(spec.seed, stream_id("parity")));
  for (std::size_t i = 0; i < spec.size; ++i) {
    Sample s;
    int sign = 1;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      if (j < spec.parity_bits) {
        const double bit = rng.bernoulli(0.5) ? 1.0 : -1.0;
        sign *= bit > 0 ? 1 : -1;
        s.features.push_back(bit);
      } else {
        s.features.push_back(rng.normal());
      }
    }
    s.label = sign < 0 ? 1 : 0;
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset regression(const DatasetSpec& spec) {
  if (spec.dim < 2) throw InvalidArgument("synthetic_regression needs dim >= 2");
  Dataset d{{}, TaskKind::regression, spec.dim, 1};
  Rng rng(derive_seed(spec.seed, stream_id("regression")));
  for (std::size_t i = 0; i < spec.size; ++i) {
    Sample s;
    double y = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      s.features.push_back(rng.normal());
      y += s.features.back() / static_cast<double>(j + 1);
    }
    y += s.features[0] * s.features[1] + 0.1 * rng.normal();
    s.target = {y};
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset corpus(const DatasetSpec& spec) {
  if (spec.task != TaskKind::language_modeling) throw InvalidArgument("char_corpus data is for language_modeling");
  if (spec.window == 0) throw InvalidArgument("char_corpus window must be positive");
  const std::string text = read_file(spec.path);
  if (text.size() <= spec.window)
    throw InvalidArgument("'" + spec.path.string() + "' has " + std::to_string(text.size()) +
                          " bytes, need more than the window of " + std::to_string(spec.window));
  Dataset d{{}, TaskKind::language_modeling, spec.window, kByteVocab};
  std::size_t count = text.size() - spec.window;
  if (spec.size > 0) count = std::min(count, spec.size);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    for (std::size_t j = 0; j < spec.window; ++j) s.tokens.push_back(static_cast<unsigned char>(text[i + j]));
    s.label = static_cast<unsigned char>(text[i + spec.window]);
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("'" + path.string() + "' line " + std::to_string(line) + ": '" + text +
                        "' is not a finite number");
}

Dataset tabular(const DatasetSpec& spec) {
  if (spec.task == TaskKind::language_modeling) throw InvalidArgument("tabular_csv cannot feed language_modeling");
  std::ifstream in(spec.path);
  if (!in) throw IoError("cannot open '" + spec.path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("'" + spec.path.string() + "' is empty");
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), spec.label_column);
  if (it == header.end())
    throw InvalidArgument("'" + spec.path.string() + "' has no label column '" + spec.label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(it - header.begin());

  Dataset d{{}, spec.task, header.size() - 1, spec.task == TaskKind::regression ? 1u : 0u};
  int max_label = -1;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw InvalidArgument("'" + spec.path.string() + "' line " + std::to_string(lineno) + " has " +
                            std::to_string(fields.size()) + " fields, header has " + std::to_string(header.size()));
    Sample s;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const double v = parse_number(fields[c], spec.path, lineno);
      if (c != label_col) {
        s.features.push_back(v);
      } else if (spec.task == TaskKind::regression) {
        s.target = {v};
      } else {
        if (v < 0 || v != std::floor(v))
          throw InvalidArgument("'" + spec.path.string() + "' line " + std::to_string(lineno) +
                                ": class labels must be nonnegative integers");
        s.label = static_cast<int>(v);
        max_label = std::max(max_label, s.label);
      }
    }
    d.samples.push_back(std::move(s));
    if (spec.size > 0 && d.samples.size() == spec.size) break;
  }
  if (d.samples.empty()) throw InvalidArgument("'" + spec.path.string() + "' has no data rows");
  if (spec.task == TaskKind::classification) d.output_dim = static_cast<std::size_t>(std::max(max_label + 1, 2));
  return d;
}

}  // namespace

std::string_view to_string(DataSource source) {
  switch (source) {
    case DataSource::synthetic_parity: return "synthetic_parity";
    case DataSource::synthetic_regression: return "synthetic_regression";
    case DataSource::char_corpus: return "char_corpus";
    case DataSource::tabular_csv: return "tabular_csv";
  }
  return "synthetic_parity";
}

DataSource parse_data_source(std::string_view text) {
  for (auto s : {DataSource::synthetic_parity, DataSource::synthetic_regression, DataSource::char_corpus,
                 DataSource::tabular_csv})
    if (text == to_string(s)) return s;
  throw InvalidArgument("unknown data source '" + std::string(text) + "'");
}

Dataset make_dataset(const DatasetSpec& spec) {
  switch (spec.source) {
    case DataSource::synthetic_parity:
      if (spec.task != TaskKind::classification) throw InvalidArgument("synthetic_parity is a classification task");
      if (spec.size == 0) throw InvalidArgument("synthetic data needs a positive size");
      return parity(spec);
    case DataSource::synthetic_regression:
      if (spec.task != TaskKind::regression) throw InvalidArgument("synthetic_regression is a regression task");
      if (spec.size == 0) throw InvalidArgument("synthetic data needs a positive size");
      return regression(spec);
    case DataSource::char_corpus:
      return corpus(spec);
    case DataSource::tabular_csv:
      return tabular(spec);
  }
  throw InvalidArgument("unknown data source");
}

Split split_dataset(const Dataset& data, std::uint64_t restart_seed, double train_fraction, double paucity) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw InvalidArgument("train fraction must lie in (0, 1]");
  if (!(paucity > 0.0 && paucity <= 1.0)) throw InvalidArgument("paucity fraction must lie in (0, 1]");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(restart_seed, stream_id("split")));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto kept = static_cast<std::size_t>(std::llround(paucity * static_cast<double>(n_train)));
  if (kept == 0) throw InvalidArgument("split leaves an empty training set");
  if (n_train >= n) throw InvalidArgument("split leaves an empty dev set");
  Split s;
  for (std::size_t i = 0; i < kept; ++i) s.train.push_back(data.samples[order[i]]);
  for (std::size_t i = n_train; i < n; ++i) s.dev.push_back(data.samples[order[i]]);
  return s;
}

}  // namespace fisherscope
