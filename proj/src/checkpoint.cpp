#include "leaprec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "leaprec/errors.hpp"

namespace leaprec {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'R', 'C'};

nlohmann::json branch_header(const char* prefix, const ParameterSet& p) {
  const ModelConfig& c = p.config();
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t i = 0; i < p.num_tensors(); ++i) {
    tensors.push_back({{"name", p.name(i)}, {"shape", p.tensor(i).shape()}});
  }
  return {{"prefix", prefix},
          {"num_users", c.num_users},
          {"num_items", c.num_items},
          {"dim", c.dim},
          {"gnn_layers", c.gnn_layers},
          {"sa_layers", c.sa_layers},
          {"max_seq_len", c.max_seq_len},
          {"dropout", c.dropout},
          {"literal_attn", c.literal_attn},
          {"tensors", tensors}};
}

ModelConfig branch_config(const nlohmann::json& j) {
  ModelConfig c;
  c.num_users = j.at("num_users").get<int>();
  c.num_items = j.at("num_items").get<int>();
  c.dim = j.at("dim").get<int>();
  c.gnn_layers = j.at("gnn_layers").get<int>();
  c.sa_layers = j.at("sa_layers").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.literal_attn = j.at("literal_attn").get<bool>();
  return c;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_params(std::ofstream& out, const ParameterSet& p) {
  // Hosts here are little-endian; float bytes go out verbatim.
  std::vector<float> buf;
  for (size_t i = 0; i < p.num_tensors(); ++i) {
    const Tensor& t = p.tensor(i);
    buf.resize(static_cast<size_t>(t.size()));
    for (std::int64_t j = 0; j < t.size(); ++j) buf[static_cast<size_t>(j)] = static_cast<float>(t[j]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

void read_params(std::ifstream& in, ParameterSet& p, const nlohmann::json& header,
                 const std::string& path) {
  const auto& tensors = header.at("tensors");
  if (tensors.size() != p.num_tensors()) {
    throw DataError("checkpoint tensor count mismatch in " + path);
  }
  std::vector<float> buf;
  for (size_t i = 0; i < p.num_tensors(); ++i) {
    const auto& entry = tensors.at(i);
    if (entry.at("name").get<std::string>() != p.name(i) ||
        entry.at("shape").get<std::vector<int>>() != p.tensor(i).shape()) {
      throw DataError("checkpoint tensor layout mismatch at '" + p.name(i) + "' in " + path);
    }
    Tensor& t = p.tensor(i);
    buf.resize(static_cast<size_t>(t.size()));
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw DataError("truncated checkpoint payload: " + path);
    }
    for (std::int64_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(buf[static_cast<size_t>(j)]);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& gtl, const ParameterSet& otl,
                     const std::string& config_hash) {
  if (!gtl.all_finite() || !otl.all_finite()) {
    throw NumericError("refusing to save non-finite parameters");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);

  nlohmann::json header = {{"config_hash", config_hash},
                           {"branches", {branch_header("gtl", gtl), branch_header("otl", otl)}}};
  const std::string header_str = header.dump();

  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_params(out, gtl);
  write_params(out, otl);
  if (!out) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const std::uint32_t header_len = read_u32(in, path);
  std::string header_str(header_len, '\0');
  if (!in.read(header_str.data(), header_len)) throw DataError("truncated checkpoint: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    const auto& branches = header.at("branches");
    if (branches.size() != 2) throw DataError("checkpoint must hold exactly two branches: " + path);
    ckpt.gtl = ParameterSet(branch_config(branches.at(0)));
    ckpt.otl = ParameterSet(branch_config(branches.at(1)));
    read_params(in, ckpt.gtl, branches.at(0), path);
    read_params(in, ckpt.otl, branches.at(1), path);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in " + path + ": " + e.what());
  }
  return ckpt;
}

}  // namespace leaprec
