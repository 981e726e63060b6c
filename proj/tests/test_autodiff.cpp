#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ctiq/adam.hpp"
#include "ctiq/binary_io.hpp"
#include "ctiq/error.hpp"
#include "ctiq/ops.hpp"
#include "ctiq/weights_io.hpp"
#include "support.hpp"

using namespace ctiq;
using namespace ctiq::testing;

namespace {

// Straight loop cross-correlation, used as the reference for both conv paths.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                               std::size_t pad) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> y(N * Co * Ho * Wo);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b.at(o);
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x.at(((n * Ci + c) * H + iy) * W + ix) * w.at(((o * Ci + c) * k + ky) * k + kx);
              }
          y[((n * Co + o) * Ho + oy) * Wo + ox] = acc;
        }
  return y;
}

}  // namespace

TEST(Conv2d, OnesKernelOverOneToNineSumsTo45) {
  Tape tape;
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = ops::conv2d(tape, x, Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 45.0);
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  Rng rng(1);
  Tape tape;
  const Tensor y = ops::conv2d(tape, Tensor::zeros({1, 1, 3, 3}), random_tensor({2, 1, 3, 3}, rng), Tensor::zeros({2}), 1, 1);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, UnitOneByOneKernelIsIdentity) {
  Rng rng(2);
  Tape tape;
  const Tensor x = random_tensor({2, 1, 5, 4}, rng);
  const Tensor y = ops::conv2d(tape, x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv2d, MatchesLoopReferenceAcrossGeometries) {
  struct Case {
    std::size_t n, ci, co, h, w, k, stride, pad;
  };
  // Width 16/8 with k=3, stride 1, padding 1 takes the direct kernel; the rest the im2col path.
  const Case cases[] = {{2, 3, 5, 16, 16, 3, 1, 1}, {1, 4, 9, 8, 8, 3, 1, 1},   {3, 2, 3, 6, 7, 3, 1, 1},
                        {2, 3, 4, 9, 9, 3, 2, 1},   {1, 2, 2, 7, 5, 5, 1, 2},   {2, 5, 6, 4, 4, 1, 1, 0},
                        {1, 16, 17, 8, 24, 3, 1, 1}, {2, 1, 1, 5, 5, 3, 1, 0}};
  Rng rng(3);
  for (const auto& c : cases) {
    const Tensor x = random_tensor({c.n, c.ci, c.h, c.w}, rng);
    const Tensor w = random_tensor({c.co, c.ci, c.k, c.k}, rng);
    const Tensor b = random_tensor({c.co}, rng);
    Tape tape;
    const Tensor y = ops::conv2d(tape, x, w, b, c.stride, c.pad);
    const auto ref = naive_conv(x, w, b, c.stride, c.pad);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.at(i), ref[i], 1e-12 * (1.0 + std::abs(ref[i])));
  }
}

TEST(Conv2d, ChannelMismatchNamesAxisOne) {
  Tape tape;
  try {
    ops::conv2d(tape, Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), 1, 1);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), 1u);
  }
}

TEST(Conv2d, EvenKernelRejected) {
  Tape tape;
  EXPECT_THROW(ops::conv2d(tape, Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1}), 1, 0),
               DimensionError);
}

TEST(Primitives, HandValues) {
  Tape tape;
  const Tensor r = ops::relu(tape, Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(r.at(0), 0.0);
  EXPECT_EQ(r.at(1), 0.0);
  EXPECT_EQ(r.at(2), 2.0);
  EXPECT_DOUBLE_EQ(ops::l2_norm(tape, Tensor({2}, {3, 4})).item(), 5.0);
  Rng rng(4);
  const Tensor x = random_tensor({4, 5}, rng);
  EXPECT_EQ(ops::mse(tape, x, x).item(), 0.0);
  const Tensor c = ops::clamp01(tape, Tensor({4}, {-0.5, 0.25, 1.0, 3.0}));
  EXPECT_EQ(c.at(0), 0.0);
  EXPECT_EQ(c.at(1), 0.25);
  EXPECT_EQ(c.at(3), 1.0);
}

TEST(Primitives, PoolUpsampleConcatShapes) {
  Tape tape;
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(ops::avg_pool2d(tape, x).item(), 2.5);
  const Tensor up = ops::upsample_nearest2d(tape, Tensor({1, 1, 1, 2}, {7, 9}));
  EXPECT_EQ(up.shape(), (Shape{1, 1, 2, 4}));
  const std::vector<double> want{7, 7, 9, 9, 7, 7, 9, 9};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(up.at(i), want[i]);
  const Tensor cat = ops::concat_channels(tape, Tensor::zeros({2, 1, 2, 2}), Tensor::full({2, 3, 2, 2}, 1.0));
  EXPECT_EQ(cat.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_THROW(ops::avg_pool2d(tape, Tensor::zeros({1, 1, 3, 4})), DimensionError);
  EXPECT_THROW(ops::add(tape, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4}, rng, 1.0, true);
  Tape tape;
  tape.backward(ops::sum(tape, x));
  for (double g : tape.grad(x)) EXPECT_EQ(g, 1.0);
}

TEST(Backward, QuadraticClosedForm) {
  // loss = mse(w*x, y) for a scalar w: d/dw = 2 (w x - y) x averaged over elements.
  Rng rng(6);
  const Tensor x = random_tensor({6}, rng), y = random_tensor({6}, rng);
  const double wv = 0.7;
  const Tensor w = Tensor::scalar(wv, true);
  Tape tape;
  // w*x through linear: x as [6,1], w as [1,1].
  const Tensor pred = ops::linear(tape, x.reshaped({6, 1}), ops::reshape(tape, w, {1, 1}), Tensor::zeros({1}));
  const Tensor loss = ops::mse(tape, pred, y.reshaped({6, 1}));
  tape.backward(loss);
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) want += 2.0 * (wv * x.at(i) - y.at(i)) * x.at(i) / 6.0;
  EXPECT_NEAR(tape.grad(w)[0], want, 1e-12);
}

TEST(Backward, NonScalarLossRejected) {
  Rng rng(7);
  const Tensor x = random_tensor({3}, rng, 1.0, true);
  Tape tape;
  const Tensor y = ops::mul_scalar(tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Backward, InterleavedTapesStayIsolated) {
  Rng rng(8);
  const Tensor x = random_tensor({4}, rng, 1.0, true);
  Tape a, b;
  const Tensor la = ops::sum(a, ops::mul_scalar(a, x, 3.0));
  const Tensor lb = ops::sum(b, ops::mul_scalar(b, x, -2.0));
  b.backward(lb);
  a.backward(la);
  for (double g : a.grad(x)) EXPECT_EQ(g, 3.0);
  for (double g : b.grad(x)) EXPECT_EQ(g, -2.0);
}

// ---- finite-difference gradient checks ------------------------------------

class GradCheck : public ::testing::TestWithParam<int> {
 protected:
  Rng rng{substream(99, {static_cast<std::uint64_t>(GetParam())})};
  static constexpr double kTol = 1e-4;
};

TEST_P(GradCheck, Conv2dDirectPath) {
  Tensor x = random_tensor({2, 3, 4, 8}, rng, 1.0, true), w = random_tensor({4, 3, 3, 3}, rng, 0.5, true),
         b = random_tensor({4}, rng, 1.0, true), p = random_tensor({2, 4, 4, 8}, rng);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::conv2d(t, l[0], l[1], l[2], 1, 1), p); },
                           {x, w, b}),
            kTol);
}

TEST_P(GradCheck, Conv2dStridedIm2col) {
  Tensor x = random_tensor({2, 2, 5, 5}, rng, 1.0, true), w = random_tensor({3, 2, 3, 3}, rng, 0.5, true),
         b = random_tensor({3}, rng, 1.0, true), p = random_tensor({2, 3, 3, 3}, rng);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::conv2d(t, l[0], l[1], l[2], 2, 1), p); },
                           {x, w, b}),
            kTol);
}

TEST_P(GradCheck, Elementwise) {
  Tensor x = random_tensor({3, 4}, rng, 1.0, true), y = random_tensor({3, 4}, rng, 1.0, true),
         p = random_tensor({3, 4}, rng);
  avoid_kink(x, 0.0, 1e-3);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::relu(t, l[0]), p); }, {x}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::sigmoid(t, l[0]), p); }, {x}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::add(t, l[0], l[1]), p); }, {x, y}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::sub(t, l[0], l[1]), p); }, {x, y}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::mul(t, l[0], l[1]), p); }, {x, y}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::mul_scalar(t, l[0], -1.7), p); }, {x}),
            kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::add_scalar(t, l[0], 0.3), p); }, {x}),
            kTol);
}

TEST_P(GradCheck, Clamp01) {
  Tensor x = uniform_tensor({20}, rng, -0.5, 1.5, true);
  avoid_kink(x, 0.0, 1e-3);
  avoid_kink(x, 1.0, 1e-3);
  const Tensor p = random_tensor({20}, rng);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::clamp01(t, l[0]), p); }, {x}), kTol);
}

TEST_P(GradCheck, SpatialOps) {
  Tensor x = random_tensor({2, 3, 4, 6}, rng, 1.0, true), y = random_tensor({2, 2, 4, 6}, rng, 1.0, true);
  const Tensor pp = random_tensor({2, 3, 2, 3}, rng), pu = random_tensor({2, 3, 8, 12}, rng),
               pg = random_tensor({2, 3}, rng), pc = random_tensor({2, 5, 4, 6}, rng);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::avg_pool2d(t, l[0]), pp); }, {x}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::upsample_nearest2d(t, l[0]), pu); }, {x}),
            kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::global_avg_pool(t, l[0]), pg); }, {x}),
            kTol);
  EXPECT_LT(
      gradient_error([&](Tape& t, const auto& l) { return project(t, ops::concat_channels(t, l[0], l[1]), pc); }, {x, y}),
      kTol);
}

TEST_P(GradCheck, LinearAndReductions) {
  Tensor x = random_tensor({3, 5}, rng, 1.0, true), w = random_tensor({2, 5}, rng, 1.0, true),
         b = random_tensor({2}, rng, 1.0, true), y = random_tensor({3, 5}, rng, 1.0, true);
  const Tensor p = random_tensor({3, 2}, rng), pr = random_tensor({5, 3}, rng);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::linear(t, l[0], l[1], l[2]), p); },
                           {x, w, b}),
            kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return project(t, ops::reshape(t, l[0], {5, 3}), pr); }, {x}),
            kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return ops::mean(t, l[0]); }, {x}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return ops::mse(t, l[0], l[1]); }, {x, y}), kTol);
  EXPECT_LT(gradient_error([&](Tape& t, const auto& l) { return ops::l2_norm(t, l[0]); }, {x}), kTol);
}

TEST_P(GradCheck, TwoLayerCnn) {
  Tensor x = random_tensor({2, 2, 8, 8}, rng, 1.0, true), w1 = random_tensor({3, 2, 3, 3}, rng, 0.5, true),
         b1 = random_tensor({3}, rng, 0.1, true), w2 = random_tensor({1, 3}, rng, 1.0, true),
         b2 = random_tensor({1}, rng, 0.1, true), target = random_tensor({2, 1}, rng);
  auto loss = [&](Tape& t, const std::vector<Tensor>& l) {
    const Tensor h = ops::avg_pool2d(t, ops::relu(t, ops::conv2d(t, l[0], l[1], l[2], 1, 1)));
    return ops::mse(t, ops::linear(t, ops::global_avg_pool(t, h), l[3], l[4]), target);
  };
  // Keep pre-activations away from the relu kink so differences stay on one side.
  {
    Tape t;
    const Tensor pre = ops::conv2d(t, x, w1, b1, 1, 1);
    double closest = 1.0;
    for (double v : pre.data()) closest = std::min(closest, std::abs(v));
    if (closest < 1e-4) GTEST_SKIP() << "instance too close to a relu kink";
  }
  EXPECT_LT(gradient_error(loss, {x, w1, b1, w2, b2}), kTol);
}

INSTANTIATE_TEST_SUITE_P(TwentyInstances, GradCheck, ::testing::Range(0, 20));

// ---- Adam -------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  Adam opt({0.1});
  const std::vector<double> g(3, 0.0);
  for (int i = 0; i < 5; ++i) opt.step(p, g);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), -2.0);
  EXPECT_EQ(p.at(2), 0.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m1 = (1-b1) g, v1 = (1-b2) g^2; bias-corrected ratio is g/|g| up to eps.
  for (double g : {1e-3, 0.5, 40.0, -7.0}) {
    Tensor p = Tensor::scalar(0.0);
    Adam opt({0.01});
    const std::vector<double> grad{g};
    opt.step(p, grad);
    EXPECT_NEAR(p.item(), -0.01 * g / (std::abs(g) + 1e-8), 1e-12);
  }
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  Tensor p = Tensor::scalar(0.0);
  Adam opt({0.05});
  double prev = 0.0;
  for (int i = 0; i < 50; ++i) {
    opt.step(p, std::vector<double>{2.0});
    EXPECT_LT(p.item(), prev);
    prev = p.item();
  }
}

// ---- weight container ---------------------------------------------------------

class WeightsIo : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "ctiq_weights_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(WeightsIo, RoundTripIsBitExact) {
  Rng rng(11);
  WeightFile f{"arch v1", {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({4}, rng)}}};
  save_weights(dir / "w.ctiq", f);
  const WeightFile g = load_weights(dir / "w.ctiq");
  EXPECT_EQ(g.header, "arch v1");
  ASSERT_EQ(g.tensors.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(g.tensors[t].name, f.tensors[t].name);
    EXPECT_EQ(g.tensors[t].tensor.shape(), f.tensors[t].tensor.shape());
    for (std::size_t i = 0; i < f.tensors[t].tensor.size(); ++i) {
      EXPECT_EQ(g.tensors[t].tensor.at(i), f.tensors[t].tensor.at(i));
    }
  }
}

TEST_F(WeightsIo, TruncationAndBadMagicRejected) {
  Rng rng(12);
  save_weights(dir / "w.ctiq", {"arch", {{"layer.weight", random_tensor({8, 8}, rng)}}});
  auto bytes = binio::read_file(dir / "w.ctiq");
  binio::write_file(dir / "short.ctiq", std::span<const char>(bytes.data(), bytes.size() - 9));
  try {
    load_weights(dir / "short.ctiq");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos) << e.what();
  }
  bytes[0] = 'X';
  binio::write_file(dir / "magic.ctiq", bytes);
  EXPECT_THROW(load_weights(dir / "magic.ctiq"), FormatError);
}
