#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ctiq {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const void* data, std::size_t size);

/// Record of one command run: resolved configuration, seeds, wall-clock time
/// and the hashes of every input and output file.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config(const std::map<std::string, std::string>& resolved) { config_ = resolved; }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::filesystem::path& path);
  /// `path` relative to the output directory.
  void add_artifact(const std::filesystem::path& out_dir, const std::filesystem::path& relative);

  /// Writes manifest_<command>.json under out_dir and returns its path.
  std::filesystem::path write(const std::filesystem::path& out_dir) const;
  std::string json() const;

 private:
  struct FileHash {
    std::string path;
    std::uintmax_t bytes;
    std::string sha256;
  };
  std::string command_;
  std::map<std::string, std::string> config_;
  std::map<std::string, std::uint64_t> seeds_;
  std::vector<FileHash> inputs_, artifacts_;
  std::chrono::system_clock::time_point started_;
  std::chrono::steady_clock::time_point clock_;
};

}  // namespace ctiq
