#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "feratt/losses.hpp"
#include "feratt/network.hpp"

namespace feratt {

// FNV-1a 64-bit, used for artifact content digests.
uint64_t fnv1a64(const void* data, size_t size);
uint64_t fnv1a64_file(const std::string& path);
std::string digest_hex(uint64_t digest);

// Versioned binary container: magic line, JSON header, raw little-endian
// doubles for every named parameter blob (trainable and running stats).
struct Checkpoint {
  int version = 1;
  NetworkConfig net_config;
  GaussianManifoldConfig manifold;
  std::string arm;  // baseline | att-cls | att-rep-cls
  uint64_t seed = 0;
  int epochs_completed = 0;
  std::string base_digest;  // digest of the fine-tuning base, if any
  std::map<std::string, std::vector<double>> blobs;

  uint64_t content_digest() const;

  static Checkpoint capture(FERAttNetwork& network, const GaussianManifoldConfig& manifold,
                            const std::string& arm, uint64_t seed, int epochs_completed);
  void restore_into(FERAttNetwork& network) const;
  std::unique_ptr<FERAttNetwork> instantiate() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

NetworkMode mode_for_arm(const std::string& arm);
LossWeights weights_for_arm(const std::string& arm);

}  // namespace feratt
