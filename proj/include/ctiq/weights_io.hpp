#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctiq/tensor.hpp"

namespace ctiq {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Contents of a "CTIQ1" weight container: an architecture header string and
/// an ordered list of f64 tensors.
///
/// Layout (little-endian):
///   "CTIQ1" | u32 len, header bytes | u32 count
///   | count x (u32 len, name | u32 len, dtype "f64" | u32 rank | rank x u64 extent)
///   | payloads, f64 each, in manifest order
/// The loader checks that the file length equals exactly what the manifest implies.
struct WeightFile {
  std::string header;
  std::vector<NamedTensor> tensors;
};

void save_weights(const std::filesystem::path& path, const WeightFile& file);
WeightFile load_weights(const std::filesystem::path& path);

}  // namespace ctiq
