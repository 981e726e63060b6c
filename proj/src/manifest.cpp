#include "ctiq/manifest.hpp"

#include <openssl/evp.h>

#include <ctime>
#include <json.hpp>

#include "ctiq/binary_io.hpp"

namespace ctiq {

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  const std::vector<char> bytes = binio::read_file(path);
  return sha256_hex(bytes.data(), bytes.size());
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), started_(std::chrono::system_clock::now()), clock_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs_.push_back({path.string(), std::filesystem::file_size(path), sha256_file(path)});
}

void RunManifest::add_artifact(const std::filesystem::path& out_dir, const std::filesystem::path& relative) {
  const auto full = out_dir / relative;
  artifacts_.push_back({relative.generic_string(), std::filesystem::file_size(full), sha256_file(full)});
}

std::string RunManifest::json() const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["config"] = config_;
  j["seeds"] = seeds_;
  const std::time_t t = std::chrono::system_clock::to_time_t(started_);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  j["started_utc"] = stamp;
  j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_).count();
  auto files = [](const std::vector<FileHash>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha256}});
    return a;
  };
  j["inputs"] = files(inputs_);
  j["artifacts"] = files(artifacts_);
  return j.dump(2) + "\n";
}

std::filesystem::path RunManifest::write(const std::filesystem::path& out_dir) const {
  const auto path = out_dir / ("manifest_" + command_ + ".json");
  const std::string text = json();
  binio::write_file(path, std::span<const char>(text.data(), text.size()));
  return path;
}

}  // namespace ctiq
