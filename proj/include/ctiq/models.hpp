#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctiq/ops.hpp"
#include "ctiq/rng.hpp"
#include "ctiq/tensor.hpp"
#include "ctiq/weights_io.hpp"

namespace ctiq {

/// Whether a forward pass should record gradients into model parameters.
/// `frozen` still lets gradients flow through to the inputs.
enum class ParamGrad { track, frozen };

struct ScoreRange {
  double lo = 0.0;
  double hi = 100.0;
  double width() const noexcept { return hi - lo; }
};

/// A differentiable scalar image scorer. Implementations are read-only during
/// forward passes and may be shared across threads.
class Scorer {
 public:
  virtual ~Scorer() = default;

  /// images [N,3,H,W] -> scores [N,1].
  virtual Tensor forward(Tape& tape, const Tensor& images, ParamGrad mode = ParamGrad::frozen) const = 0;
  virtual ScoreRange range() const = 0;

  std::vector<double> score_batch(const Tensor& images) const;
  /// image [3,H,W] or [1,3,H,W].
  double score(const Tensor& image) const;
};

/// Ordered, named parameter tensors with deep-copy semantics on clone().
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  const Tensor& operator[](std::size_t i) const { return params_[i].tensor; }
  Tensor& operator[](std::size_t i) { return params_[i].tensor; }
  const Tensor& get(std::size_t i, ParamGrad mode) const {
    return mode == ParamGrad::track ? params_[i].tensor : detached_[i];
  }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;
  std::vector<Tensor> tensors() const;
  const std::vector<NamedTensor>& named() const noexcept { return params_; }
  ParameterSet clone() const;
  /// Replace values from `tensors`, matching by position, name and shape.
  void assign(const std::vector<NamedTensor>& tensors, const std::string& context);
  bool equals(const ParameterSet& other) const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<Tensor> detached_;
};

/// He-style fan-in scaled Gaussian init for a conv or linear weight.
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

/// The toy no-reference quality metric:
///   3 x [conv3x3 -> relu -> avgpool2x2] (3->8->16->32), global average pool,
///   linear 32->1, score = lo + (hi - lo) * sigmoid(z).
/// Inputs need H and W divisible by 8.
class QualityModel final : public Scorer {
 public:
  static constexpr const char* kArchitecture = "quality_model/v1 conv3x3:3-8-16-32 pool2 gap linear:32-1 sigmoid";

  static QualityModel init(std::uint64_t seed, ScoreRange range = {});
  static QualityModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  Tensor forward(Tape& tape, const Tensor& images, ParamGrad mode = ParamGrad::frozen) const override;
  ScoreRange range() const override { return range_; }

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  QualityModel clone() const;

 private:
  QualityModel() = default;
  ParameterSet params_;
  ScoreRange range_{};
};

/// Seven-conv U-Net denoiser predicting the clean image directly.
///
///   e1 = relu(conv 3->16)                          H
///   e2 = relu(conv 16->32 (pool e1))               H/2
///   e3 = relu(conv 32->64 (pool e2))               H/4
///   u1 = relu(conv 64->16 (up e3))                 H/2
///   d1 = relu(conv 48->16 [u1, e2])                H/2
///   d2 = relu(conv 32->16 [up d1, e1])             H
///   out = clamp01(conv 16->3 d2)                   H
///
/// All kernels 3x3, padding 1. Inputs need H and W divisible by 4 and may hold
/// any real values; outputs are always in [0,1].
class DenoiserModel {
 public:
  static constexpr const char* kArchitecture =
      "denoiser/v1 unet7 conv3x3 e:3-16-32-64 u1:64-16 d1:48-16 d2:32-16 out:16-3 clamp01";
  static constexpr std::size_t kLayers = 7;

  static DenoiserModel init(std::uint64_t seed);
  static DenoiserModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// images [N,3,H,W] -> [N,3,H,W].
  Tensor forward(Tape& tape, const Tensor& images, ParamGrad mode = ParamGrad::frozen) const;
  /// Untracked convenience for [3,H,W] or [N,3,H,W] inputs; returns the same rank.
  Tensor denoise(const Tensor& images) const;

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  DenoiserModel clone() const;

  /// Parameter count implied by the layer table above.
  static std::size_t expected_parameter_count();

 private:
  DenoiserModel() = default;
  ParameterSet params_;
};

/// Batch [N,3,H,W] view of a single [3,H,W] image (or pass-through for rank 4).
Tensor as_batch(const Tensor& image);
/// Stack equally shaped [3,H,W] images into [N,3,H,W].
Tensor stack_images(const std::vector<Tensor>& images);
/// Image i of a [N,C,H,W] batch as [C,H,W].
Tensor batch_item(const Tensor& batch, std::size_t i);

}  // namespace ctiq
