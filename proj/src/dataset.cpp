#include "ctiq/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ctiq/binary_io.hpp"
#include "ctiq/error.hpp"
#include "ctiq/models.hpp"
#include "ctiq/parallel.hpp"
#include "ctiq/rng.hpp"

namespace ctiq {

namespace {

constexpr char kMagic[] = "CTDS1";
constexpr std::size_t kMagicLen = 5;
constexpr std::size_t kMaxSinusoids = 8;

enum : std::uint64_t { kTextureStream = 1, kDegradeStream = 2, kLabelStream = 3, kSplitStream = 4, kMosStream = 5 };

void require_extents(const char* who, std::size_t h, std::size_t w) {
  if (h == 0 || h % 8) throw DimensionError(who, 1, (h / 8 + 1) * 8, h, "height must be a positive multiple of 8");
  if (w == 0 || w % 8) throw DimensionError(who, 2, (w / 8 + 1) * 8, w, "width must be a positive multiple of 8");
}

// One axis of a circular box blur on a [C,H,W] buffer.
void box_pass(std::vector<double>& v, std::size_t C, std::size_t H, std::size_t W, std::size_t r, bool along_x) {
  std::vector<double> out(v.size());
  const double inv = 1.0 / static_cast<double>(2 * r + 1);
  const auto n = static_cast<std::ptrdiff_t>(along_x ? W : H);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t d = -static_cast<std::ptrdiff_t>(r); d <= static_cast<std::ptrdiff_t>(r); ++d) {
          const auto pos = static_cast<std::ptrdiff_t>(along_x ? x : y) + d;
          const auto wrapped = static_cast<std::size_t>(((pos % n) + n) % n);
          acc += along_x ? v[(c * H + y) * W + wrapped] : v[(c * H + wrapped) * W + x];
        }
        out[(c * H + y) * W + x] = acc * inv;
      }
    }
  }
  v.swap(out);
}

}  // namespace

const char* to_string(Degradation kind) {
  switch (kind) {
    case Degradation::noise: return "noise";
    case Degradation::blur: return "blur";
    case Degradation::contrast: return "contrast";
  }
  return "?";
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<Tensor> Dataset::image_list(Split split) const {
  std::vector<Tensor> out;
  for (std::size_t i : indices(split)) out.push_back(items[i].image);
  return out;
}

Tensor Dataset::images(Split split) const { return stack_images(image_list(split)); }

std::vector<double> Dataset::mos(Split split) const {
  std::vector<double> out;
  for (std::size_t i : indices(split)) out.push_back(items[i].mos);
  return out;
}

Tensor clean_texture(std::size_t height, std::size_t width, std::uint64_t seed) {
  // Integer frequencies up to extent/9 cycles per image keep every radius-<=4
  // box filter response non-negative and decreasing, which makes blur MSE monotone.
  const auto kx_max = static_cast<int>(std::max<std::size_t>(1, width / 9));
  const auto ky_max = static_cast<int>(std::max<std::size_t>(1, height / 9));
  Rng rng(seed);
  std::vector<double> v(3 * height * width, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t terms = 1 + rng.next() % kMaxSinusoids;
    for (std::size_t t = 0; t < terms; ++t) {
      int kx = static_cast<int>(rng.next() % (2 * kx_max + 1)) - kx_max;
      int ky = static_cast<int>(rng.next() % (ky_max + 1));
      if (t == 0) {
        // The leading term always sits at the top frequency so every texture carries fine detail.
        if (rng.next() % 2) {
          kx = (rng.next() % 2) ? kx_max : -kx_max;
        } else {
          ky = ky_max;
        }
      }
      if (kx == 0 && ky == 0) ky = 1;
      const double amp = rng.uniform(0.2, 1.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double arg = 2.0 * std::numbers::pi *
                             (kx * static_cast<double>(x) / static_cast<double>(width) +
                              ky * static_cast<double>(y) / static_cast<double>(height));
          v[(c * height + y) * width + x] += amp * std::cos(arg + phase);
        }
      }
    }
    auto first = v.begin() + static_cast<std::ptrdiff_t>(c * height * width);
    auto last = first + static_cast<std::ptrdiff_t>(height * width);
    const auto [mn, mx] = std::minmax_element(first, last);
    const double lo = *mn, span = *mx - *mn;
    for (auto it = first; it != last; ++it) *it = span > 0.0 ? 0.1 + 0.8 * (*it - lo) / span : 0.5;
  }
  return Tensor({3, height, width}, std::move(v));
}

Tensor degrade(const Tensor& clean, Degradation kind, double severity, std::uint64_t seed) {
  if (clean.rank() != 3) throw DimensionError("degrade", "expected [C,H,W], got " + to_string(clean.shape()));
  if (!(severity >= 0.0 && severity <= 1.0)) throw DomainError("degrade: severity must lie in [0,1]");
  const std::size_t C = clean.dim(0), H = clean.dim(1), W = clean.dim(2);
  std::vector<double> v(clean.data().begin(), clean.data().end());
  switch (kind) {
    case Degradation::noise: {
      Rng rng(seed);
      for (double& p : v) p = std::clamp(p + 0.35 * severity * rng.normal(), 0.0, 1.0);
      break;
    }
    case Degradation::blur: {
      const auto r = static_cast<std::size_t>(std::lround(4.0 * severity));
      if (r > 0) {
        box_pass(v, C, H, W, r, true);
        box_pass(v, C, H, W, r, false);
      }
      break;
    }
    case Degradation::contrast:
      for (double& p : v) p = std::clamp(p + severity * (0.5 - p), 0.0, 1.0);
      break;
    default:
      throw DomainError("degrade: unknown degradation kind " + std::to_string(static_cast<int>(kind)));
  }
  return Tensor(clean.shape(), std::move(v));
}

void assign_splits(Dataset& d) {
  const std::size_t n = d.items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) { return substream(d.items[i].seed, {kSplitStream}); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  for (std::size_t r = 0; r < n; ++r) {
    d.items[order[r]].split = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
}

Dataset generate(const GenerateOptions& opt) {
  require_extents("generate", opt.height, opt.width);
  if (opt.count < 10) throw ConfigError("count", "needs at least 10 images, got " + std::to_string(opt.count));
  if (!(opt.mos_noise >= 0.0)) throw ConfigError("mos_noise", "must be non-negative");
  Dataset d;
  d.items.resize(opt.count);
  parallel_for(opt.count, opt.workers, [&](std::size_t i) {
    LabeledImage& item = d.items[i];
    item.seed = substream(opt.seed, {i});
    Rng label(substream(item.seed, {kLabelStream}));
    item.kind = static_cast<Degradation>(label.next() % 3);
    item.severity = label.uniform();
    item.mos = 100.0 * (1.0 - item.severity);
    if (opt.mos_noise > 0.0) {
      Rng jitter(substream(item.seed, {kMosStream}));
      item.mos = std::clamp(item.mos + opt.mos_noise * jitter.normal(), 0.0, 100.0);
    }
    const Tensor clean = clean_texture(opt.height, opt.width, substream(item.seed, {kTextureStream}));
    item.image = degrade(clean, item.kind, item.severity, substream(item.seed, {kDegradeStream}));
  });
  assign_splits(d);
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, kMagicLen));
  w.u64(d.items.size());
  for (const LabeledImage& item : d.items) {
    if (item.image.rank() != 3) throw DimensionError("save_dataset", "images must be [C,H,W]");
    w.f64(item.mos);
    w.u8(static_cast<std::uint8_t>(item.kind));
    w.f64(item.severity);
    w.u64(item.seed);
    for (std::size_t a = 0; a < 3; ++a) w.u32(static_cast<std::uint32_t>(item.image.dim(a)));
    w.f64s(item.image.data());
  }
  const auto& buf = w.buffer();
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(buf.data() + kMagicLen),
                          static_cast<uInt>(buf.size() - kMagicLen));
  w.u32(static_cast<std::uint32_t>(crc));
  binio::write_file(path, w.buffer());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::vector<char> bytes = binio::read_file(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < kMagicLen + 12 || std::string_view(bytes.data(), kMagicLen) != std::string_view(kMagic, kMagicLen)) {
    throw FormatError(where + "not a CTDS1 dataset (bad magic or too short)");
  }
  const std::size_t body = bytes.size() - 4;
  binio::Reader trailer(std::span<const char>(bytes).subspan(body));
  const std::uint32_t stored = trailer.u32("checksum");
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data() + kMagicLen),
                          static_cast<uInt>(body - kMagicLen));
  if (static_cast<std::uint32_t>(crc) != stored) {
    throw FormatError(where + "checksum mismatch (file truncated or corrupt)");
  }
  binio::Reader r(std::span<const char>(bytes).subspan(kMagicLen, body - kMagicLen));
  const std::uint64_t count = r.u64("item count");
  Dataset d;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string what = "item " + std::to_string(i);
    LabeledImage item;
    item.mos = r.f64(what + " mos");
    const std::uint8_t kind = r.u8(what + " kind");
    if (kind > 2) throw FormatError(where + what + ": unknown degradation kind " + std::to_string(kind));
    item.kind = static_cast<Degradation>(kind);
    item.severity = r.f64(what + " severity");
    item.seed = r.u64(what + " seed");
    Shape shape(3);
    for (auto& e : shape) {
      e = r.u32(what + " shape");
      if (e == 0) throw FormatError(where + what + ": zero extent");
    }
    item.image = Tensor(shape, r.f64s(numel(shape), what + " pixels"));
    d.items.push_back(std::move(item));
  }
  if (r.remaining() != 0) throw FormatError(where + std::to_string(r.remaining()) + " unexpected trailing bytes");
  assign_splits(d);
  return d;
}

Dataset concat(const std::vector<Dataset>& parts) {
  Dataset d;
  for (const Dataset& p : parts) d.items.insert(d.items.end(), p.items.begin(), p.items.end());
  assign_splits(d);
  return d;
}

}  // namespace ctiq
