#include "ctiq/models.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ctiq/error.hpp"

namespace ctiq {

std::vector<double> Scorer::score_batch(const Tensor& images) const {
  Tape tape;
  const Tensor s = forward(tape, images.detach(), ParamGrad::frozen);
  return {s.data().begin(), s.data().end()};
}

double Scorer::score(const Tensor& image) const {
  const Tensor batch = as_batch(image);
  if (batch.dim(0) != 1) throw DimensionError("score", 0, 1, batch.dim(0), "expected a single image");
  return score_batch(batch)[0];
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 4) return image;
  if (image.rank() != 3) throw DimensionError("as_batch", "expected [C,H,W] or [N,C,H,W], got " + to_string(image.shape()));
  Tensor b = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  return image.requires_grad() ? b.with_grad() : b;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw DimensionError("stack_images", "no images");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw DimensionError("stack_images", "expected [C,H,W] images, got " + to_string(s));
  std::vector<double> data;
  data.reserve(images.size() * numel(s));
  for (const Tensor& im : images) {
    if (im.shape() != s) throw DimensionError("stack_images", "mixed shapes " + to_string(s) + " and " + to_string(im.shape()));
    data.insert(data.end(), im.data().begin(), im.data().end());
  }
  return Tensor({images.size(), s[0], s[1], s[2]}, std::move(data));
}

Tensor batch_item(const Tensor& batch, std::size_t i) {
  if (batch.rank() != 4) throw DimensionError("batch_item", "expected [N,C,H,W], got " + to_string(batch.shape()));
  if (i >= batch.dim(0)) throw DimensionError("batch_item", 0, batch.dim(0), i, "index out of range");
  const std::size_t n = batch.dim(1) * batch.dim(2) * batch.dim(3);
  const auto d = batch.data();
  return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::vector<double>(d.begin() + i * n, d.begin() + (i + 1) * n));
}

Tensor& ParameterSet::add(std::string name, Tensor value) {
  Tensor tracked = value.with_grad();
  detached_.push_back(tracked.detach());
  params_.push_back({std::move(name), std::move(tracked)});
  return params_.back().tensor;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& p : params_) copy.add(p.name, p.tensor.clone());
  return copy;
}

void ParameterSet::assign(const std::vector<NamedTensor>& tensors, const std::string& context) {
  if (tensors.size() != params_.size()) {
    throw FormatError(context + ": expected " + std::to_string(params_.size()) + " tensors, found " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = tensors[i];
    if (src.name != params_[i].name) {
      throw FormatError(context + ": manifest entry " + std::to_string(i) + " is '" + src.name + "', expected '" +
                        params_[i].name + "'");
    }
    if (src.tensor.shape() != params_[i].tensor.shape()) {
      throw FormatError(context + ": manifest entry '" + src.name + "' has shape " + to_string(src.tensor.shape()) +
                        ", architecture needs " + to_string(params_[i].tensor.shape()));
    }
    auto dst = params_[i].tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.begin());
  }
}

bool ParameterSet::equals(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto a = params_[i].tensor.data();
    const auto b = other.params_[i].tensor.data();
    if (params_[i].tensor.shape() != other.params_[i].tensor.shape() || !std::equal(a.begin(), a.end(), b.begin())) {
      return false;
    }
  }
  return true;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

namespace {

void add_conv(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  ps.add(name + ".weight", he_normal({cout, cin, 3, 3}, cin * 9, rng));
  ps.add(name + ".bias", Tensor::zeros({cout}));
}

Tensor conv3(Tape& tape, const Tensor& x, const ParameterSet& ps, std::size_t idx, ParamGrad mode) {
  return ops::conv2d(tape, x, ps.get(idx, mode), ps.get(idx + 1, mode), 1, 1);
}

void require_images(const char* who, const Tensor& images, std::size_t multiple) {
  if (images.rank() != 4) throw DimensionError(who, "expected [N,3,H,W], got " + to_string(images.shape()));
  if (images.dim(1) != 3) throw DimensionError(who, 1, 3, images.dim(1), "channels");
  if (images.dim(2) % multiple) {
    throw DimensionError(who, 2, (images.dim(2) / multiple + 1) * multiple, images.dim(2),
                         "height must be a multiple of " + std::to_string(multiple));
  }
  if (images.dim(3) % multiple) {
    throw DimensionError(who, 3, (images.dim(3) / multiple + 1) * multiple, images.dim(3),
                         "width must be a multiple of " + std::to_string(multiple));
  }
}

std::string header_field(const std::string& header, const std::string& key) {
  const auto pos = header.find(" " + key + "=");
  if (pos == std::string::npos) return {};
  const auto start = pos + key.size() + 2;
  const auto end = header.find(' ', start);
  return header.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_architecture(const WeightFile& file, const std::string& arch, const std::filesystem::path& path) {
  if (file.header.rfind(arch, 0) != 0) {
    throw FormatError(path.string() + ": architecture header '" + file.header + "' does not match '" + arch + "'");
  }
}

}  // namespace

QualityModel QualityModel::init(std::uint64_t seed, ScoreRange range) {
  if (!(range.width() > 0.0)) throw DomainError("score range must have hi > lo");
  Rng rng(substream(seed, {0x51}));
  QualityModel m;
  m.range_ = range;
  add_conv(m.params_, "conv1", 3, 8, rng);
  add_conv(m.params_, "conv2", 8, 16, rng);
  add_conv(m.params_, "conv3", 16, 32, rng);
  m.params_.add("head.weight", he_normal({1, 32}, 32, rng));
  m.params_.add("head.bias", Tensor::zeros({1}));
  return m;
}

Tensor QualityModel::forward(Tape& tape, const Tensor& images, ParamGrad mode) const {
  require_images("QualityModel", images, 8);
  Tensor h = images;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    h = ops::avg_pool2d(tape, ops::relu(tape, conv3(tape, h, params_, 2 * layer, mode)));
  }
  Tensor z = ops::linear(tape, ops::global_avg_pool(tape, h), params_.get(6, mode), params_.get(7, mode));
  return ops::add_scalar(tape, ops::mul_scalar(tape, ops::sigmoid(tape, z), range_.width()), range_.lo);
}

QualityModel QualityModel::clone() const {
  QualityModel m;
  m.params_ = params_.clone();
  m.range_ = range_;
  return m;
}

void QualityModel::save(const std::filesystem::path& path) const {
  WeightFile f;
  f.header = std::string(kArchitecture) + " lo=" + format_double(range_.lo) + " hi=" + format_double(range_.hi);
  f.tensors = params_.named();
  save_weights(path, f);
}

QualityModel QualityModel::load(const std::filesystem::path& path) {
  const WeightFile f = load_weights(path);
  require_architecture(f, kArchitecture, path);
  ScoreRange range;
  try {
    range.lo = std::stod(header_field(f.header, "lo"));
    range.hi = std::stod(header_field(f.header, "hi"));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": header lacks a valid score range");
  }
  QualityModel m = init(0, range);
  m.params_.assign(f.tensors, path.string());
  return m;
}

DenoiserModel DenoiserModel::init(std::uint64_t seed) {
  Rng rng(substream(seed, {0xd5}));
  DenoiserModel m;
  add_conv(m.params_, "e1", 3, 16, rng);
  add_conv(m.params_, "e2", 16, 32, rng);
  add_conv(m.params_, "e3", 32, 64, rng);
  add_conv(m.params_, "u1", 64, 16, rng);
  add_conv(m.params_, "d1", 48, 16, rng);
  add_conv(m.params_, "d2", 32, 16, rng);
  add_conv(m.params_, "out", 16, 3, rng);
  return m;
}

std::size_t DenoiserModel::expected_parameter_count() {
  constexpr std::size_t table[kLayers][2] = {{3, 16}, {16, 32}, {32, 64}, {64, 16}, {48, 16}, {32, 16}, {16, 3}};
  std::size_t n = 0;
  for (const auto& [cin, cout] : table) n += cout * cin * 9 + cout;
  return n;
}

Tensor DenoiserModel::forward(Tape& tape, const Tensor& images, ParamGrad mode) const {
  require_images("DenoiserModel", images, 4);
  const Tensor e1 = ops::relu(tape, conv3(tape, images, params_, 0, mode));
  const Tensor e2 = ops::relu(tape, conv3(tape, ops::avg_pool2d(tape, e1), params_, 2, mode));
  const Tensor e3 = ops::relu(tape, conv3(tape, ops::avg_pool2d(tape, e2), params_, 4, mode));
  const Tensor u1 = ops::relu(tape, conv3(tape, ops::upsample_nearest2d(tape, e3), params_, 6, mode));
  const Tensor d1 = ops::relu(tape, conv3(tape, ops::concat_channels(tape, u1, e2), params_, 8, mode));
  const Tensor d2 =
      ops::relu(tape, conv3(tape, ops::concat_channels(tape, ops::upsample_nearest2d(tape, d1), e1), params_, 10, mode));
  return ops::clamp01(tape, conv3(tape, d2, params_, 12, mode));
}

Tensor DenoiserModel::denoise(const Tensor& images) const {
  Tape tape;
  const Tensor out = forward(tape, as_batch(images).detach(), ParamGrad::frozen);
  return images.rank() == 3 ? out.reshaped(images.shape()) : out;
}

DenoiserModel DenoiserModel::clone() const {
  DenoiserModel m;
  m.params_ = params_.clone();
  return m;
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  save_weights(path, WeightFile{kArchitecture, params_.named()});
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  const WeightFile f = load_weights(path);
  require_architecture(f, kArchitecture, path);
  DenoiserModel m = init(0);
  m.params_.assign(f.tensors, path.string());
  return m;
}

}  // namespace ctiq
