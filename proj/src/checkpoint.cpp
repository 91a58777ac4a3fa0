#include "gaterace/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace gaterace {

namespace {

constexpr std::array<char, 8> kMagic{'G', 'R', 'C', 'K', 'P', 'T', '\0', '\1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}

void put_doubles(std::ostream& os, const nn::ParamVector& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

nn::ParamVector get_doubles(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw CheckpointError("checkpoint array too large");
  nn::ParamVector v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}

nlohmann::json tensor_table(const nn::ParamLayout& layout) {
  nlohmann::json t = nlohmann::json::array();
  for (const nn::ParamEntry& e : layout.entries()) {
    t.push_back({{"name", e.name},
                 {"rows", e.rows},
                 {"cols", e.cols},
                 {"offset", e.offset}});
  }
  return t;
}

}  // namespace

std::uint64_t config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const Policy shape(c.policy);
  if (c.trainer.params.size() != shape.num_params()) {
    throw CheckpointError("save_checkpoint: parameter count does not match config");
  }
  nlohmann::json header = {
      {"config_hash", c.config_hash},
      {"run_config", c.run_config},
      {"policy", policy_config_to_json(c.policy)},
      {"tensors", tensor_table(shape.layout())},
      {"steps", c.trainer.steps},
      {"rollouts", c.trainer.rollouts},
      {"curriculum", c.trainer.curriculum},
      {"rng_state", c.trainer.rng_state},
      {"adam_t", c.trainer.adam.t},
  };
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, c.config_hash);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_doubles(os, c.trainer.params);
    put_doubles(os, c.trainer.adam.m);
    put_doubles(os, c.trainer.adam.v);
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  Checkpoint c;
  c.config_hash = get<std::uint64_t>(is);
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("checkpoint truncated");
  const nlohmann::json header = nlohmann::json::parse(text);
  if (header.at("config_hash").get<std::uint64_t>() != c.config_hash) {
    throw CheckpointError("checkpoint header hash mismatch");
  }
  c.run_config = header.at("run_config");
  c.policy = policy_config_from_json(header.at("policy"));
  c.trainer.steps = header.at("steps").get<std::int64_t>();
  c.trainer.rollouts = header.at("rollouts").get<std::int64_t>();
  c.trainer.curriculum = header.at("curriculum");
  c.trainer.rng_state = header.at("rng_state").get<std::string>();
  c.trainer.adam.t = header.at("adam_t").get<std::int64_t>();
  c.trainer.params = get_doubles(is);
  c.trainer.adam.m = get_doubles(is);
  c.trainer.adam.v = get_doubles(is);

  const Policy shape(c.policy);
  if (header.at("tensors") != tensor_table(shape.layout()) ||
      c.trainer.params.size() != shape.num_params()) {
    throw CheckpointError("checkpoint tensor table does not match its policy config");
  }
  return c;
}

Policy policy_from_checkpoint(const Checkpoint& c) {
  Policy p(c.policy);
  p.params() = c.trainer.params;
  return p;
}

}  // namespace gaterace
