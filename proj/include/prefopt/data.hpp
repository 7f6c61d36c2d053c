#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prefopt {

// One (prompt, preferred, dispreferred) triple with its language direction.
struct PreferencePair {
  std::string id;
  std::string direction;  // "xx-yy" source-target language codes
  std::string source_text;
  std::string preferred;     // post-edited translation (winner)
  std::string dispreferred;  // machine translation (loser)
};

struct DatasetManifest {
  std::string split;  // train / validation / evaluation
  std::map<std::string, int> counts_per_direction;
  int min_chars = -1;  // filled by the prepare pipeline
  int per_direction = 0;
  uint64_t seed = 0;
};

// JSONL with fields {id, direction, source_text, preferred, dispreferred};
// errors carry the 1-based line number.
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs);

// Keeps pairs whose source_text has strictly more than min_chars Unicode
// scalar values; stable order.
std::vector<PreferencePair> filter_min_length(std::vector<PreferencePair> pairs,
                                              int min_chars = 50);

size_t count_unicode_scalars(std::string_view utf8);

// Seeded uniform subsample of exactly n pairs per direction, grouped by
// direction in lexicographic order. Underfull directions are an error.
std::pair<std::vector<PreferencePair>, DatasetManifest> balance_per_direction(
    const std::vector<PreferencePair>& pairs, int n, uint64_t seed,
    const std::string& split = "train");

// Language codes and full names known to the toolkit.
const std::map<std::string, std::string>& default_language_names();
std::string language_name(const std::string& code);
std::pair<std::string, std::string> split_direction(const std::string& direction);

// "Translate this text from {src} to {tgt}: ..." with full language names.
std::string render_prompt(const std::string& src_lang, const std::string& tgt_lang,
                          const std::string& src_sent);

struct TemplatedText {
  std::string full_text;
  size_t response_begin = 0;  // span covering the response and its end marker
  size_t response_end = 0;
};

TemplatedText apply_chat_template(const std::string& prompt, const std::string& response);

// Byte-level tokenizer: UTF-8 bytes map to ids 0-255; the template markers
// and the pad symbol are atomic ids 256-259.
inline constexpr int kUserMarkerId = 256;
inline constexpr int kAssistantMarkerId = 257;
inline constexpr int kEndMarkerId = 258;
inline constexpr int kPadId = 259;
inline constexpr int kVocabSize = 260;

inline constexpr std::string_view kUserMarker = "<|user|>";
inline constexpr std::string_view kAssistantMarker = "<|assistant|>";
inline constexpr std::string_view kEndMarker = "</s>";

std::vector<int> tokenize(std::string_view text);
std::string detokenize(std::span<const int> tokens);

// Token-id views of one pair: the templated prompt through the assistant
// marker, and each response followed by the end marker.
struct TokenizedPair {
  std::string id;  // carried through for error reporting
  std::string direction;
  std::vector<int> context_tokens;
  std::vector<int> resp_w_tokens;
  std::vector<int> resp_l_tokens;
};

TokenizedPair build_tokenized_pair(const PreferencePair& pair,
                                   const std::map<std::string, std::string>& lang_names,
                                   int max_context = 256);

// Raw pair plus its tokenization; the unit consumed by evaluation.
struct PreparedPair {
  PreferencePair pair;
  TokenizedPair tokens;
};

std::vector<PreparedPair> prepare_pairs(std::span<const PreferencePair> pairs,
                                        const std::map<std::string, std::string>& lang_names,
                                        int max_context = 256);

}  // namespace prefopt
