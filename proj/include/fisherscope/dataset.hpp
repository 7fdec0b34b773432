#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fisherscope/model.hpp"
#include "fisherscope/sample.hpp"

namespace fisherscope {

enum class DataSource { synthetic_parity, synthetic_regression, char_corpus, tabular_csv };

std::string_view to_string(DataSource source);
DataSource parse_data_source(std::string_view text);

struct DatasetSpec {
  DataSource source = DataSource::synthetic_parity;
  TaskKind task = TaskKind::classification;
  /// Number of samples; for file sources 0 keeps every row or window.
  std::size_t size = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path path;

  /// Feature count of the synthetic tasks.
  std::size_t dim = 10;
  /// Leading +-1 coordinates whose parity is the label.
  std::size_t parity_bits = 3;
  /// Context length of char_corpus windows.
  std::size_t window = 16;
  std::string label_column = "label";
};

struct Dataset {
  std::vector<Sample> samples;
  TaskKind task = TaskKind::classification;
  /// Features per sample, or the window length for token data.
  std::size_t input_dim = 0;
  /// Classes, regression targets, or vocabulary size.
  std::size_t output_dim = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

/// Byte-level vocabulary of char_corpus data.
inline constexpr std::size_t kByteVocab = 256;

/// Deterministic in the spec.
///  - synthetic_parity: the first `parity_bits` features are +-1 bits, the
///    rest standard normal distractors; label 1 when the bits multiply to -1.
///  - synthetic_regression: y = sum_j x_j / (j + 1) + x_0 x_1 + 0.1 noise.
///  - char_corpus: every `window`-byte context labelled by the next byte,
///    len - window windows in file order.
///  - tabular_csv: header row, numeric columns, `label_column` as the label
///    (integer class) or target (regression).
Dataset make_dataset(const DatasetSpec& spec);

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> dev;
};

/// Shuffles with `restart_seed`, keeps round(train_fraction * n) samples for
/// training and the rest for dev, then truncates the training side to
/// round(paucity * n_train).
Split split_dataset(const Dataset& data, std::uint64_t restart_seed, double train_fraction, double paucity);

}  // namespace fisherscope
