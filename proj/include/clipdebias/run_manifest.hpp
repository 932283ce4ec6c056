#pragma once

// Per-command run record written next to every CLI output. Needs
// OpenSSL::Crypto; not pulled in by clipdebias.hpp.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "clipdebias/embedding.hpp"
#include "clipdebias/error.hpp"

namespace clipdebias {

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("cli: sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(detail::read_file_bytes(path, "cli"));
}

struct FileDigest {
  std::string path;  // basename only, so records do not depend on the working directory
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;

  void add_input(const std::filesystem::path& p) {
    inputs.push_back({p.filename().string(), sha256_file(p)});
  }
  void add_output(const std::filesystem::path& p) {
    outputs.push_back({p.filename().string(), sha256_file(p)});
  }

  nlohmann::json to_json() const {
    auto files = [](const std::vector<FileDigest>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& f : v) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
      return a;
    };
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"inputs", files(inputs)},
            {"outputs", files(outputs)}};
  }

  void write(const std::filesystem::path& path) const {
    detail::write_file_bytes(path, to_json().dump(2) + "\n", "cli");
  }
};

inline constexpr const char* kRunManifestName = "run_manifest.json";

}  // namespace clipdebias
