#include "feratt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "feratt/errors.hpp"

namespace feratt {

namespace {
constexpr char kMagic[] = "FERATT-CKPT\n";
}

uint64_t fnv1a64(const void* data, size_t size) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read file for digest: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

std::string digest_hex(uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

uint64_t Checkpoint::content_digest() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, blob] : blobs) {
    uint64_t nh = fnv1a64(name.data(), name.size());
    uint64_t bh = fnv1a64(blob.data(), blob.size() * sizeof(double));
    h ^= nh;
    h *= 0x100000001b3ull;
    h ^= bh;
    h *= 0x100000001b3ull;
  }
  return h;
}

Checkpoint Checkpoint::capture(FERAttNetwork& network, const GaussianManifoldConfig& manifold,
                               const std::string& arm, uint64_t seed, int epochs_completed) {
  Checkpoint c;
  c.net_config = network.config();
  c.manifold = manifold;
  c.arm = arm;
  c.seed = seed;
  c.epochs_completed = epochs_completed;
  for (const auto& p : network.params())
    c.blobs[p.name] = std::vector<double>(p.value, p.value + p.size);
  return c;
}

void Checkpoint::restore_into(FERAttNetwork& network) const {
  for (auto& p : network.params()) {
    auto it = blobs.find(p.name);
    if (it == blobs.end()) throw VersionMismatchError("checkpoint missing blob: " + p.name);
    if (it->second.size() != p.size)
      throw VersionMismatchError("checkpoint blob size mismatch: " + p.name);
    std::copy(it->second.begin(), it->second.end(), p.value);
  }
}

std::unique_ptr<FERAttNetwork> Checkpoint::instantiate() const {
  auto net = std::make_unique<FERAttNetwork>(net_config, mode_for_arm(arm));
  restore_into(*net);
  return net;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["version"] = ckpt.version;
  header["net_config"] = nlohmann::json::parse(ckpt.net_config.to_json());
  header["manifold"] = nlohmann::json::parse(ckpt.manifold.to_json());
  header["arm"] = ckpt.arm;
  header["seed"] = ckpt.seed;
  header["epochs_completed"] = ckpt.epochs_completed;
  header["base_digest"] = ckpt.base_digest;
  header["digest"] = digest_hex(ckpt.content_digest());
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& [name, blob] : ckpt.blobs)
    blobs.push_back({{"name", name}, {"size", blob.size()}});
  header["blobs"] = blobs;
  std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(kMagic, sizeof(kMagic) - 1);
  uint64_t hsize = htext.size();
  f.write(reinterpret_cast<const char*>(&hsize), sizeof(hsize));
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, blob] : ckpt.blobs)
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!f) throw IoError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  char magic[sizeof(kMagic) - 1];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw VersionMismatchError("not a checkpoint file: " + path);
  uint64_t hsize = 0;
  f.read(reinterpret_cast<char*>(&hsize), sizeof(hsize));
  std::string htext(hsize, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hsize));
  if (!f) throw IoError("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(htext);

  Checkpoint c;
  c.version = header.at("version").get<int>();
  if (c.version != 1) throw VersionMismatchError("unsupported checkpoint version");
  c.net_config = NetworkConfig::from_json(header.at("net_config").dump());
  c.manifold = GaussianManifoldConfig::from_json(header.at("manifold").dump());
  c.arm = header.at("arm").get<std::string>();
  c.seed = header.at("seed").get<uint64_t>();
  c.epochs_completed = header.at("epochs_completed").get<int>();
  c.base_digest = header.value("base_digest", "");
  for (const auto& entry : header.at("blobs")) {
    std::string name = entry.at("name").get<std::string>();
    size_t size = entry.at("size").get<size_t>();
    std::vector<double> blob(size);
    f.read(reinterpret_cast<char*>(blob.data()),
           static_cast<std::streamsize>(size * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint blob: " + name);
    c.blobs[name] = std::move(blob);
  }
  std::string expected = header.at("digest").get<std::string>();
  if (digest_hex(c.content_digest()) != expected)
    throw VersionMismatchError("checkpoint digest mismatch: " + path);
  return c;
}

NetworkMode mode_for_arm(const std::string& arm) {
  if (arm == "baseline") return NetworkMode::baseline;
  if (arm == "att-cls" || arm == "att-rep-cls") return NetworkMode::feratt;
  throw ConfigurationError("unknown model arm: " + arm);
}

LossWeights weights_for_arm(const std::string& arm) {
  if (arm == "baseline") return LossWeights::baseline();
  if (arm == "att-cls") return LossWeights::attention_cls();
  if (arm == "att-rep-cls") return LossWeights::attention_rep_cls();
  throw ConfigurationError("unknown model arm: " + arm);
}

}  // namespace feratt
