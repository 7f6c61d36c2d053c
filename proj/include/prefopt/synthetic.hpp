#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefopt/data.hpp"

namespace prefopt {

// Copy-translation fixture corpus: the preferred response is the source
// sentence itself, the dispreferred one a character-corrupted copy. Each
// direction draws words from its own syllable inventory so corruptions are
// statistically out of distribution.
struct SyntheticConfig {
  std::vector<std::string> directions;
  int pairs_per_direction = 100;
  // One rate broadcast to all directions, or one rate per direction.
  std::vector<double> corruption_rates = {0.3};
  uint64_t seed = 0;
  // 88-char ceiling keeps the longest templated pair inside the default
  // 256-token context (75 + len context tokens, len + 1 response tokens).
  int min_source_chars = 55;
  int max_source_chars = 88;
};

// The eight directions used throughout the analysis, target-sorted.
std::vector<std::string> default_synthetic_directions(int count);

std::vector<PreferencePair> generate_synthetic_pairs(const SyntheticConfig& cfg);

}  // namespace prefopt
