#include "fisherscope/mask.hpp"

#include <cmath>
#include <numeric>

#include "fisherscope/error.hpp"
#include "fisherscope/rng.hpp"

namespace fisherscope {

std::string_view to_string(MaskSource source) {
  switch (source) {
    case MaskSource::fisher_top: return "fisher_top";
    case MaskSource::fisher_bottom: return "fisher_bottom";
    case MaskSource::random: return "random";
    case MaskSource::all: return "all";
  }
  return "all";
}

std::size_t PerturbationMask::popcount() const noexcept {
  std::size_t n = 0;
  for (auto f : flags) n += f != 0;
  return n;
}

std::size_t selection_count(double fraction, std::size_t total) {
  if (!(fraction > 0.0) || fraction > 1.0) throw InvalidArgument("mask fraction must lie in (0, 1]");
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

PerturbationMask full_mask(std::size_t total) {
  return PerturbationMask{std::vector<std::uint8_t>(total, 1), MaskSource::all, 1.0, 0};
}

PerturbationMask random_mask(std::size_t total, double fraction, std::uint64_t seed) {
  const std::size_t k = selection_count(fraction, total);
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, stream_id("random-mask")));
  rng.shuffle(idx);
  PerturbationMask m{std::vector<std::uint8_t>(total, 0), MaskSource::random, fraction, seed};
  for (std::size_t i = 0; i < k; ++i) m.flags[idx[i]] = 1;
  return m;
}

}  // namespace fisherscope
