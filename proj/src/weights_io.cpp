#include "ctiq/weights_io.hpp"

#include "ctiq/binary_io.hpp"
#include "ctiq/error.hpp"

namespace ctiq {

namespace {
constexpr std::string_view kMagic = "CTIQ1";
}

void save_weights(const std::filesystem::path& path, const WeightFile& file) {
  binio::Writer w;
  w.bytes(kMagic);
  w.str(file.header);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.str(name);
    w.str("f64");
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
  }
  for (const auto& entry : file.tensors) w.f64s(entry.tensor.data());
  binio::write_file(path, w.buffer());
}

WeightFile load_weights(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError(path.string() + ": not a CTIQ1 weight file");
  WeightFile file;
  file.header = r.str("header");
  const std::uint32_t count = r.u32("tensor count");
  std::vector<std::pair<std::string, Shape>> manifest;
  std::size_t payload = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string entry = "manifest entry " + std::to_string(i);
    std::string name = r.str(entry + " name");
    const std::string dtype = r.str("manifest entry '" + name + "' dtype");
    if (dtype != "f64") throw FormatError("manifest entry '" + name + "': unsupported dtype '" + dtype + "'");
    const std::uint32_t rank = r.u32("manifest entry '" + name + "' rank");
    if (rank == 0 || rank > 8) throw FormatError("manifest entry '" + name + "': bad rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.u64("manifest entry '" + name + "' shape");
      if (e == 0 || e > (std::size_t{1} << 32)) throw FormatError("manifest entry '" + name + "': bad extent");
    }
    payload += numel(shape);
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (r.remaining() != payload * 8) {
    // Name the first entry whose payload does not fit, or the last one when bytes trail.
    std::string culprit = manifest.empty() ? std::string("tensor count") : "'" + manifest.back().first + "'";
    std::size_t end = 0;
    for (const auto& [name, shape] : manifest) {
      end += numel(shape) * 8;
      if (end > r.remaining()) {
        culprit = "'" + name + "'";
        break;
      }
    }
    throw FormatError(path.string() + ": payload of manifest entry " + culprit + " does not match the file (" +
                      std::to_string(r.remaining()) + " payload bytes, manifest implies " +
                      std::to_string(payload * 8) + ")");
  }
  for (auto& [name, shape] : manifest) {
    auto values = r.f64s(numel(shape), "payload of '" + name + "'");
    file.tensors.push_back({name, Tensor(shape, std::move(values))});
  }
  return file;
}

}  // namespace ctiq
