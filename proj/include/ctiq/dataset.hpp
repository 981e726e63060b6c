#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctiq/tensor.hpp"

namespace ctiq {

enum class Degradation : std::uint8_t { noise = 0, blur = 1, contrast = 2 };
enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* to_string(Degradation kind);
const char* to_string(Split split);

struct LabeledImage {
  Tensor image;  ///< [3,H,W] in [0,1]
  double mos = 100.0;
  Degradation kind = Degradation::noise;
  double severity = 0.0;
  std::uint64_t seed = 0;  ///< source seed: fixes the clean texture and the degradation noise
  Split split = Split::train;
};

struct Dataset {
  std::vector<LabeledImage> items;

  std::size_t size() const noexcept { return items.size(); }
  std::vector<std::size_t> indices(Split split) const;
  /// Images of one split stacked to [n,3,H,W], in dataset order.
  Tensor images(Split split) const;
  std::vector<double> mos(Split split) const;
  std::vector<Tensor> image_list(Split split) const;
};

struct GenerateOptions {
  std::size_t count = 500;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
  /// sd of Gaussian jitter added to mos (then clipped to [0,100]); 0 keeps mos = 100 (1 - s).
  double mos_noise = 0.0;
  std::size_t workers = 1;
};

/// Band-limited texture: per channel a sum of 1..8 sinusoids with integer
/// frequencies that wrap around the image, rescaled to [0.1, 0.9].
Tensor clean_texture(std::size_t height, std::size_t width, std::uint64_t seed);

/// Apply one degradation family at severity s in [0,1]. Noise draws come from
/// `seed`, so a fixed (image, kind, seed) gives a severity-monotone family.
///   noise:    clip(x + 0.35 s z), z ~ N(0, 1)
///   blur:     circular box blur of radius round(4 s)
///   contrast: x + s (0.5 - x)
Tensor degrade(const Tensor& clean, Degradation kind, double severity, std::uint64_t seed);

/// Split tags are a function of the item seeds only: items are ordered by a
/// hash of their seed and the first 80% become train, the next 10% val, the rest test.
void assign_splits(Dataset& d);

Dataset generate(const GenerateOptions& opt);

/// "CTDS1" | u64 count | per item: f64 mos, u8 kind, f64 severity, u64 seed,
/// u32 x3 shape, f64 pixels | u32 CRC-32 of everything after the magic.
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

/// Items of all inputs in order, with splits reassigned over the union.
Dataset concat(const std::vector<Dataset>& parts);

}  // namespace ctiq
