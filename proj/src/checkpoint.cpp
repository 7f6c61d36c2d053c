#include "prefopt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "prefopt/errors.hpp"

namespace prefopt {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8);

uint64_t to_le(uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
  return out;
}

void write_doubles_le(std::ofstream& out, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    return;
  }
  for (double d : values) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    bits = to_le(bits);
    out.write(reinterpret_cast<const char*>(&bits), 8);
  }
}

void read_doubles_le(std::ifstream& in, std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    return;
  }
  for (double& d : values) {
    uint64_t bits;
    in.read(reinterpret_cast<char*>(&bits), 8);
    bits = to_le(bits);
    std::memcpy(&d, &bits, 8);
  }
}

json config_to_json(const TinyLMConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
          {"d_ff", cfg.d_ff},             {"max_context", cfg.max_context},
          {"seed", cfg.seed}};
}

TinyLMConfig config_from_json(const json& j) {
  TinyLMConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.max_context = j.at("max_context").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TinyLMParams& params) {
  const auto tensors = named_tensors(params);
  json header;
  header["format"] = "tinylm";
  header["version"] = 1;
  header["config"] = config_to_json(params.config);
  json table = json::array();
  uint64_t offset = 0;  // in doubles, from the start of the payload
  for (const auto& nt : tensors) {
    table.push_back({{"name", nt.name},
                     {"rows", nt.tensor->rows},
                     {"cols", nt.tensor->cols},
                     {"offset", offset}});
    offset += nt.tensor->size();
  }
  header["tensors"] = std::move(table);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint '" + path.string() + "'");
  const std::string header_str = header.dump();
  const uint64_t len = to_le(static_cast<uint64_t>(header_str.size()));
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& nt : tensors) write_doubles_le(out, nt.tensor->data);
  if (!out) throw ParseError("failed writing checkpoint '" + path.string() + "'");
}

TinyLMParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  uint64_t len_le = 0;
  in.read(reinterpret_cast<char*>(&len_le), 8);
  if (!in) throw ParseError("checkpoint '" + path.string() + "' truncated");
  const uint64_t len = to_le(len_le);
  if (len > (1u << 20)) throw ParseError("checkpoint header unreasonably large");
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("checkpoint '" + path.string() + "' truncated");

  json header = json::parse(header_str, nullptr, false);
  if (header.is_discarded()) throw ParseError("checkpoint header is not valid JSON");
  if (header.value("format", "") != "tinylm" || header.value("version", 0) != 1)
    throw ParseError("unsupported checkpoint format");

  try {
    TinyLMParams shaper;
    shaper.config = config_from_json(header.at("config"));
    TinyLMParams params = zeros_like(shaper);
    auto tensors = named_tensors(params);
    const json& table = header.at("tensors");
    if (!table.is_array() || table.size() != tensors.size())
      throw ParseError("checkpoint tensor table does not match the config");
    for (size_t i = 0; i < tensors.size(); ++i) {
      const json& entry = table[i];
      if (entry.at("name").get<std::string>() != tensors[i].name ||
          entry.at("rows").get<int>() != tensors[i].tensor->rows ||
          entry.at("cols").get<int>() != tensors[i].tensor->cols)
        throw ParseError("checkpoint tensor '" + tensors[i].name + "' has unexpected shape");
      read_doubles_le(in, tensors[i].tensor->data);
      if (!in) throw ParseError("checkpoint '" + path.string() + "' truncated");
    }
    return params;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header is incomplete: " + std::string(e.what()));
  }
}

}  // namespace prefopt
