#include "tempcircuit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tempcircuit {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'K', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t offset, int n) {
  if (offset + n > in.size()) throw ParseError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {
      {"n_layers", cfg.n_layers}, {"n_heads", cfg.n_heads},     {"d_model", cfg.d_model},
      {"d_head", cfg.d_head},     {"d_mlp", cfg.d_mlp},         {"vocab_size", cfg.vocab_size},
      {"max_seq_len", cfg.max_seq_len}, {"use_rmsnorm", cfg.use_rmsnorm}, {"seed", cfg.seed},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.d_head = j.at("d_head").get<int>();
    cfg.d_mlp = j.at("d_mlp").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.use_rmsnorm = j.value("use_rmsnorm", false);
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
}

std::vector<std::uint8_t> checkpoint_bytes(const Weights& w) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = config_to_json(w.config);
  header["seed"] = w.config.seed;
  header["dtype"] = "f32le";
  header["params"] = nlohmann::json::array();
  visit_params(w, [&](const std::string& name, std::span<const double> values) {
    header["params"].push_back({{"name", name}, {"size", values.size()}});
  });
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  visit_params(w, [&](const std::string&, std::span<const double> values) {
    for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  });
  return out;
}

Weights checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
  const auto version = get_le(bytes, 4, 4);
  if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  const auto header_len = get_le(bytes, 8, 8);
  if (16 + header_len > bytes.size()) throw ParseError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  const ModelConfig cfg = config_from_json(header.at("config"));
  Weights w = zero_weights(cfg);

  std::size_t offset = 16 + header_len;
  std::size_t block = 0;
  const auto& params = header.at("params");
  visit_params(w, [&](const std::string& name, std::span<double> values) {
    if (block >= params.size() || params[block].at("name") != name ||
        params[block].at("size").get<std::size_t>() != values.size()) {
      throw ParseError("checkpoint: parameter table does not match config at " + name);
    }
    ++block;
    for (double& v : values) {
      v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, offset, 4))));
      offset += 4;
    }
  });
  if (offset != bytes.size()) throw ParseError("checkpoint: trailing bytes");
  return w;
}

void save_checkpoint(const std::filesystem::path& path, const Weights& w) {
  const auto bytes = checkpoint_bytes(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Weights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace tempcircuit
