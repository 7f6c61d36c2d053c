#include "prefopt/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "prefopt/errors.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

namespace {

using nlohmann::json;

std::string require_string_field(const json& obj, const char* field, size_t line_no) {
  if (!obj.contains(field) || !obj[field].is_string())
    throw ParseError("line " + std::to_string(line_no) + ": missing or non-string field '" +
                     field + "'");
  return obj[field].get<std::string>();
}

bool is_valid_direction(const std::string& d) {
  if (d.size() != 5 || d[2] != '-') return false;
  for (size_t i : {0u, 1u, 3u, 4u})
    if (d[i] < 'a' || d[i] > 'z') return false;
  return true;
}

}  // namespace

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::vector<PreferencePair> pairs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object())
      throw ParseError("line " + std::to_string(line_no) + ": malformed JSON");
    PreferencePair p;
    p.id = require_string_field(obj, "id", line_no);
    p.direction = require_string_field(obj, "direction", line_no);
    p.source_text = require_string_field(obj, "source_text", line_no);
    p.preferred = require_string_field(obj, "preferred", line_no);
    p.dispreferred = require_string_field(obj, "dispreferred", line_no);
    if (p.preferred.empty() || p.dispreferred.empty())
      throw ParseError("line " + std::to_string(line_no) +
                       ": preferred and dispreferred must be nonempty");
    if (!is_valid_direction(p.direction))
      throw ParseError("line " + std::to_string(line_no) + ": direction '" + p.direction +
                       "' does not match xx-yy");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  for (const PreferencePair& p : pairs) {
    json obj = {{"id", p.id},
                {"direction", p.direction},
                {"source_text", p.source_text},
                {"preferred", p.preferred},
                {"dispreferred", p.dispreferred}};
    out << obj.dump() << '\n';
  }
}

size_t count_unicode_scalars(std::string_view utf8) {
  size_t n = 0;
  for (unsigned char c : utf8)
    if ((c & 0xC0) != 0x80) ++n;  // skip continuation bytes
  return n;
}

std::vector<PreferencePair> filter_min_length(std::vector<PreferencePair> pairs, int min_chars) {
  if (min_chars < 0) throw std::invalid_argument("min_chars must be >= 0");
  std::vector<PreferencePair> kept;
  kept.reserve(pairs.size());
  for (auto& p : pairs)
    if (count_unicode_scalars(p.source_text) > static_cast<size_t>(min_chars))
      kept.push_back(std::move(p));
  return kept;
}

std::pair<std::vector<PreferencePair>, DatasetManifest> balance_per_direction(
    const std::vector<PreferencePair>& pairs, int n, uint64_t seed, const std::string& split) {
  if (n < 1) throw std::invalid_argument("per-direction count must be >= 1");
  std::map<std::string, std::vector<size_t>> by_direction;
  for (size_t i = 0; i < pairs.size(); ++i) by_direction[pairs[i].direction].push_back(i);

  for (const auto& [direction, indices] : by_direction)
    if (indices.size() < static_cast<size_t>(n))
      throw DataError("direction '" + direction + "' has " + std::to_string(indices.size()) +
                      " pairs after filtering; need " + std::to_string(n));

  DetRng rng(seed);
  std::vector<PreferencePair> out;
  out.reserve(by_direction.size() * static_cast<size_t>(n));
  DatasetManifest manifest;
  manifest.split = split;
  manifest.per_direction = n;
  manifest.seed = seed;
  for (auto& [direction, indices] : by_direction) {
    // Partial Fisher-Yates draw of n without replacement, then file order.
    std::vector<size_t> pool = indices;
    for (int i = 0; i < n; ++i) {
      const size_t j = i + static_cast<size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(static_cast<size_t>(n));
    std::sort(pool.begin(), pool.end());
    for (size_t idx : pool) out.push_back(pairs[idx]);
    manifest.counts_per_direction[direction] = n;
  }
  return {std::move(out), std::move(manifest)};
}

const std::map<std::string, std::string>& default_language_names() {
  static const std::map<std::string, std::string> names = {
      {"ar", "Arabic"},  {"zh", "Chinese"}, {"nl", "Dutch"},      {"en", "English"},
      {"fr", "French"},  {"de", "German"},  {"it", "Italian"},    {"ja", "Japanese"},
      {"es", "Spanish"}, {"tr", "Turkish"}, {"uk", "Ukrainian"},  {"vi", "Vietnamese"},
  };
  return names;
}

std::string language_name(const std::string& code) {
  const auto& names = default_language_names();
  auto it = names.find(code);
  if (it == names.end()) {
    std::string known;
    for (const auto& [c, _] : names) {
      if (!known.empty()) known += ", ";
      known += c;
    }
    throw DataError("unknown language code '" + code + "'; known codes: " + known);
  }
  return it->second;
}

std::pair<std::string, std::string> split_direction(const std::string& direction) {
  if (!is_valid_direction(direction))
    throw DataError("direction '" + direction + "' does not match xx-yy");
  return {direction.substr(0, 2), direction.substr(3, 2)};
}

std::string render_prompt(const std::string& src_lang, const std::string& tgt_lang,
                          const std::string& src_sent) {
  if (src_lang.empty() || tgt_lang.empty())
    throw std::invalid_argument("language names must be nonempty");
  if (src_sent.empty()) throw std::invalid_argument("source sentence must be nonempty");
  return "Translate this text from " + src_lang + " to " + tgt_lang + ":\n\n" + src_lang +
         ": " + src_sent + "\n" + tgt_lang + ":";
}

TemplatedText apply_chat_template(const std::string& prompt, const std::string& response) {
  if (prompt.empty()) throw std::invalid_argument("prompt must be nonempty");
  TemplatedText t;
  t.full_text = std::string(kUserMarker) + "\n" + prompt + std::string(kEndMarker) + "\n" +
                std::string(kAssistantMarker) + "\n";
  t.response_begin = t.full_text.size();
  t.full_text += response + std::string(kEndMarker);
  t.response_end = t.full_text.size();
  return t;
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    const std::string_view rest = text.substr(i);
    if (rest.starts_with(kUserMarker)) {
      ids.push_back(kUserMarkerId);
      i += kUserMarker.size();
    } else if (rest.starts_with(kAssistantMarker)) {
      ids.push_back(kAssistantMarkerId);
      i += kAssistantMarker.size();
    } else if (rest.starts_with(kEndMarker)) {
      ids.push_back(kEndMarkerId);
      i += kEndMarker.size();
    } else {
      ids.push_back(static_cast<unsigned char>(text[i]));
      ++i;
    }
  }
  return ids;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int id : tokens) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (id == kUserMarkerId) {
      out += kUserMarker;
    } else if (id == kAssistantMarkerId) {
      out += kAssistantMarker;
    } else if (id == kEndMarkerId) {
      out += kEndMarker;
    } else if (id == kPadId) {
      out += "<|pad|>";
    } else {
      throw std::invalid_argument("token id " + std::to_string(id) + " out of range");
    }
  }
  return out;
}

TokenizedPair build_tokenized_pair(const PreferencePair& pair,
                                   const std::map<std::string, std::string>& lang_names,
                                   int max_context) {
  const auto [src_code, tgt_code] = split_direction(pair.direction);
  auto name_of = [&](const std::string& code) {
    auto it = lang_names.find(code);
    if (it == lang_names.end()) {
      std::string known;
      for (const auto& [c, _] : lang_names) {
        if (!known.empty()) known += ", ";
        known += c;
      }
      throw DataError("unknown language code '" + code + "'; known codes: " + known);
    }
    return it->second;
  };
  const std::string prompt = render_prompt(name_of(src_code), name_of(tgt_code), pair.source_text);

  TokenizedPair t;
  t.id = pair.id;
  t.direction = pair.direction;
  // Context runs through the assistant marker; each response carries its own
  // end marker and nothing else.
  t.context_tokens = tokenize(std::string(kUserMarker) + "\n" + prompt +
                              std::string(kEndMarker) + "\n" + std::string(kAssistantMarker));
  t.resp_w_tokens = tokenize(pair.preferred + std::string(kEndMarker));
  t.resp_l_tokens = tokenize(pair.dispreferred + std::string(kEndMarker));

  const size_t limit = static_cast<size_t>(max_context);
  const size_t need_w = t.context_tokens.size() + t.resp_w_tokens.size();
  const size_t need_l = t.context_tokens.size() + t.resp_l_tokens.size();
  if (need_w > limit || need_l > limit)
    throw LengthError("pair '" + pair.id + "' (" + pair.direction + ") needs " +
                      std::to_string(std::max(need_w, need_l)) + " tokens; max_context is " +
                      std::to_string(max_context));
  return t;
}

std::vector<PreparedPair> prepare_pairs(std::span<const PreferencePair> pairs,
                                        const std::map<std::string, std::string>& lang_names,
                                        int max_context) {
  std::vector<PreparedPair> out;
  out.reserve(pairs.size());
  for (const PreferencePair& p : pairs)
    out.push_back({p, build_tokenized_pair(p, lang_names, max_context)});
  return out;
}

}  // namespace prefopt
