#include "timex/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>

#include "timex/common.hpp"

namespace txai {

namespace {
std::string to_hex(const unsigned char* digest, unsigned int len) {
  static const char* kHex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = kHex[digest[i] >> 4];
    out[2 * i + 1] = kHex[digest[i] & 0xF];
  }
  return out;
}
}  // namespace

Sha256::Sha256() {
  auto* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, "sha256: failed to allocate digest context");
  require(EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1,
          "sha256: failed to initialize digest");
  ctx_ = ctx;
}

Sha256::~Sha256() {
  if (ctx_ != nullptr) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(const void* data, size_t len) {
  require(!done_, "sha256: update after finalize");
  require(EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) == 1,
          "sha256: digest update failed");
}

void Sha256::update(std::string_view data) { update(data.data(), data.size()); }

std::string Sha256::hex() {
  if (done_) return digest_;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len) == 1,
          "sha256: digest finalize failed");
  digest_ = to_hex(digest, len);
  done_ = true;
  return digest_;
}

std::string sha256_hex(const void* data, size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.hex();
}

std::string sha256_hex(std::string_view data) {
  return sha256_hex(data.data(), data.size());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "sha256_file: cannot open " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    auto got = in.gcount();
    if (got > 0) h.update(buf.data(), static_cast<size_t>(got));
  }
  require(in.eof(), "sha256_file: read error on " + path.string());
  return h.hex();
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["config"] = m.config;
  j["inputs"] = nlohmann::json::array();
  for (const auto& [label, digest] : m.inputs) {
    j["inputs"].push_back({{"label", label}, {"sha256", digest}});
  }
  j["artifacts"] = nlohmann::json::array();
  for (const auto& [rel, digest] : m.artifacts) {
    j["artifacts"].push_back({{"path", rel}, {"sha256", digest}});
  }
  j["extra"] = m.extra;
  std::ofstream out(path);
  require(out.good(), "write_manifest: cannot open " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), "write_manifest: write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "read_manifest: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("read_manifest: invalid JSON in " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.config = j.value("config", nlohmann::json::object());
  m.extra = j.value("extra", nlohmann::json::object());
  for (const auto& item : j.value("inputs", nlohmann::json::array())) {
    m.inputs.emplace_back(item.value("label", ""), item.value("sha256", ""));
  }
  for (const auto& item : j.value("artifacts", nlohmann::json::array())) {
    m.artifacts.emplace_back(item.value("path", ""), item.value("sha256", ""));
  }
  return m;
}

}  // namespace txai
