#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fisherscope {

enum class MaskSource { fisher_top, fisher_bottom, random, all };

std::string_view to_string(MaskSource source);

/// One flag per flattened parameter coordinate (parameters in id order).
struct PerturbationMask {
  std::vector<std::uint8_t> flags;
  MaskSource source = MaskSource::all;
  double fraction = 1.0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return flags.size(); }
  std::size_t popcount() const noexcept;
  bool operator[](std::size_t i) const { return flags[i] != 0; }
};

/// round(fraction * total), the number of coordinates a mask selects.
std::size_t selection_count(double fraction, std::size_t total);

PerturbationMask full_mask(std::size_t total);

/// Exactly round(fraction * total) coordinates chosen uniformly from `seed`.
PerturbationMask random_mask(std::size_t total, double fraction, std::uint64_t seed);

}  // namespace fisherscope
