#pragma once

// Run manifests: the command, every option given, content hashes of inputs
// and outputs, and timing. Keys are written sorted so two manifests of the
// same run differ only in their timing fields.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "setloss/checkpoint.hpp"

namespace setloss::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) &&
                  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline std::string hash_file(const fs::path& path) { return git_blob_sha1(read_file(path)); }

class Manifest {
 public:
  Manifest(std::string command, std::string positional = {})
      : command_(std::move(command)), positional_(std::move(positional)),
        start_(std::chrono::system_clock::now()) {}

  /// An option exactly as given, replayable as --key=value.
  void option(const std::string& key, const std::string& value) { options_[key] = value; }
  /// Resolved configuration, informational.
  void resolved(const std::string& key, json value) { resolved_[key] = std::move(value); }
  void seed(std::uint64_t s) { seed_ = s; }
  void input(const fs::path& path) { inputs_[path.string()] = hash_file(path); }
  /// `path` relative to the output directory.
  void output(const fs::path& out_dir, const fs::path& path) {
    outputs_[path.lexically_normal().generic_string()] = hash_file(out_dir / path);
  }

  json to_json() const {
    const auto end = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(start_);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    json j;
    j["version"] = 1;
    j["command"] = command_;
    if (!positional_.empty()) j["positional"] = positional_;
    j["options"] = options_;
    j["config"] = resolved_;
    if (seed_) j["seed"] = *seed_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["started_at"] = stamp;
    j["wall_clock_seconds"] = std::chrono::duration<double>(end - start_).count();
    return j;
  }

  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    out << to_json().dump(2) << '\n';
    if (!out) throw DataError("cannot write " + path.string());
  }

 private:
  std::string command_;
  std::string positional_;
  std::chrono::system_clock::time_point start_;
  std::map<std::string, std::string> options_;
  json resolved_ = json::object();
  std::optional<std::uint64_t> seed_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

}  // namespace setloss::cli
