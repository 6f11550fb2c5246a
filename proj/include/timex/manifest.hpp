#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace txai {

// SHA-256 digests as lowercase hex.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Streaming variant for hashing many buffers without concatenation.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(const void* data, size_t len);
  void update(std::string_view data);
  std::string hex();  // finalizes; the object cannot be updated afterwards

 private:
  void* ctx_;
  bool done_ = false;
  std::string digest_;
};

// Run manifest: resolved config, input digests, and produced artifacts,
// written alongside every run directory for provenance.
struct Manifest {
  nlohmann::json config;
  std::vector<std::pair<std::string, std::string>> inputs;     // (label, sha256)
  std::vector<std::pair<std::string, std::string>> artifacts;  // (relpath, sha256)
  nlohmann::json extra;
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace txai
