#include "prefopt/synthetic.hpp"

#include <cstdio>
#include <stdexcept>

#include "prefopt/errors.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

namespace {

constexpr const char* kDefaultDirections[] = {"en-ar", "en-de", "en-it", "en-nl",
                                              "en-tr", "en-uk", "en-vi", "en-zh"};

struct Inventory {
  std::string consonants;
  std::string vowels;
};

// Direction-specific syllable inventory, derived from the direction string
// so it is stable regardless of how the direction list is ordered.
Inventory inventory_for(const std::string& direction) {
  static const std::string all_consonants = "bcdfghjklmnpqrstvz";
  static const std::string all_vowels = "aeiou";
  const uint64_t h = fnv1a64(direction);
  Inventory inv;
  const size_t c0 = static_cast<size_t>(h % all_consonants.size());
  for (size_t i = 0; i < 8; ++i)
    inv.consonants.push_back(all_consonants[(c0 + i * 3) % all_consonants.size()]);
  const size_t v0 = static_cast<size_t>((h >> 32) % all_vowels.size());
  for (size_t i = 0; i < 3; ++i)
    inv.vowels.push_back(all_vowels[(v0 + i) % all_vowels.size()]);
  return inv;
}

std::string make_word(const Inventory& inv, DetRng& rng) {
  const int syllables = 2 + static_cast<int>(rng.below(3));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w.push_back(inv.consonants[rng.below(inv.consonants.size())]);
    w.push_back(inv.vowels[rng.below(inv.vowels.size())]);
  }
  return w;
}

std::string make_sentence(const Inventory& inv, DetRng& rng, int min_chars, int max_chars) {
  // Words are at most 9 chars (separator + 4 CV syllables), so aiming below
  // max_chars - 10 keeps the final length within [min_chars + 1, max_chars].
  const size_t target = static_cast<size_t>(min_chars) +
                        rng.below(static_cast<uint64_t>(max_chars - 10 - min_chars));
  std::string s;
  while (s.size() < target) {
    if (!s.empty()) s.push_back(' ');
    s += make_word(inv, rng);
  }
  s.push_back('.');
  return s;
}

// Substitution-only corruption keeps token counts equal between preferred
// and dispreferred, so raw log-likelihoods stay comparable.
std::string corrupt(const std::string& text, double rate, DetRng& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::string out = text;
  for (char& c : out) {
    if (c == ' ' || c == '.') continue;
    if (rng.uniform() < rate) {
      char repl;
      do {
        repl = alphabet[rng.below(alphabet.size())];
      } while (repl == c);
      c = repl;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> default_synthetic_directions(int count) {
  constexpr int kMax = static_cast<int>(std::size(kDefaultDirections));
  if (count < 1 || count > kMax)
    throw DataError("synthetic direction count must be between 1 and " + std::to_string(kMax));
  return {kDefaultDirections, kDefaultDirections + count};
}

std::vector<PreferencePair> generate_synthetic_pairs(const SyntheticConfig& cfg) {
  if (cfg.directions.empty()) throw std::invalid_argument("directions must be nonempty");
  if (cfg.pairs_per_direction < 1)
    throw std::invalid_argument("pairs_per_direction must be >= 1");
  if (cfg.corruption_rates.size() != 1 && cfg.corruption_rates.size() != cfg.directions.size())
    throw ConfigError("corruption rates must be a single value or one per direction");
  if (cfg.min_source_chars < 1 || cfg.max_source_chars < cfg.min_source_chars + 11)
    throw std::invalid_argument("need 1 <= min_source_chars <= max_source_chars - 11");
  for (double r : cfg.corruption_rates)
    if (r < 0.0 || r > 1.0) throw ConfigError("corruption rate must be in [0, 1]");
  for (const std::string& d : cfg.directions) {
    const auto [src, tgt] = split_direction(d);
    language_name(src);  // reject unknown codes before generating anything
    language_name(tgt);
  }

  DetRng rng(cfg.seed);
  std::vector<PreferencePair> pairs;
  pairs.reserve(cfg.directions.size() * static_cast<size_t>(cfg.pairs_per_direction));
  for (size_t d = 0; d < cfg.directions.size(); ++d) {
    const std::string& direction = cfg.directions[d];
    const double rate =
        cfg.corruption_rates.size() == 1 ? cfg.corruption_rates[0] : cfg.corruption_rates[d];
    const Inventory inv = inventory_for(direction);
    for (int i = 0; i < cfg.pairs_per_direction; ++i) {
      PreferencePair p;
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%04d", direction.c_str(), i);
      p.id = id;
      p.direction = direction;
      p.source_text = make_sentence(inv, rng, cfg.min_source_chars, cfg.max_source_chars);
      p.preferred = p.source_text;
      p.dispreferred = corrupt(p.source_text, rate, rng);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

}  // namespace prefopt
