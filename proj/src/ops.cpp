#include "ctiq/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "ctiq/error.hpp"

namespace ctiq::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(op, "expected a rank-" + std::to_string(rank) + " tensor, got " + to_string(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) {
    throw DimensionError(op, "rank mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  for (std::size_t axis = 0; axis < a.rank(); ++axis) {
    if (a.dim(axis) != b.dim(axis)) throw DimensionError(op, axis, a.dim(axis), b.dim(axis));
  }
}

template <class Fwd, class Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd f, Deriv deriv) {
  auto xv = x.data();
  std::vector<double> y(xv.size());
  std::transform(xv.begin(), xv.end(), y.begin(), f);
  Tensor out(x.shape(), std::move(y), x.requires_grad());
  if (x.requires_grad()) {
    tape.record(out, [x, out, deriv](Tape& t) {
      const auto* gy = t.find_grad(out);
      if (!gy) return;
      auto gx = t.grad_buffer(x);
      const double* __restrict g = gy->data();
      const double* __restrict xv = x.data().data();
      const double* __restrict yv = out.data().data();
      double* __restrict dst = gx.data();
      for (std::size_t i = 0, n = gx.size(); i < n; ++i) dst[i] += g[i] * deriv(xv[i], yv[i]);
    });
  }
  return out;
}

constexpr std::size_t kColumnTile = 256;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) of a stride-1 row whose input index ox + shift is in range.
inline void valid_span(std::ptrdiff_t shift, std::size_t width, std::size_t out_w, std::size_t& lo,
                       std::size_t& hi) {
  const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, -shift);
  const std::ptrdiff_t b = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_w),
                                                    static_cast<std::ptrdiff_t>(width) - shift);
  lo = static_cast<std::size_t>(a);
  hi = static_cast<std::size_t>(std::max(a, b));
}

// Columns for output rows [oy0, oy1); `col` is rows() x ((oy1 - oy0) * out_w).
void im2col(const double* x, const ConvGeometry& g, double* col, std::size_t oy0, std::size_t oy1) {
  const std::size_t P = (oy1 - oy0) * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
        const auto shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          double* row = dst + (oy - oy0) * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          if (g.stride == 1) {
            std::size_t lo, hi;
            valid_span(shift, g.width, g.out_w, lo, hi);
            std::fill(row, row + lo, 0.0);
            std::copy(src + static_cast<std::ptrdiff_t>(lo) + shift, src + static_cast<std::ptrdiff_t>(hi) + shift,
                      row + lo);
            std::fill(row + hi, row + g.out_w, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride) + shift;
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* x) {
  const std::size_t P = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* srcrow = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
        const auto shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.padding);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* s = srcrow + oy * g.out_w;
          if (g.stride == 1) {
            std::size_t lo, hi;
            valid_span(shift, g.width, g.out_w, lo, hi);
            double* d = dst + shift;
            for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += s[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride) + shift;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += s[ox];
          }
        }
      }
    }
  }
}

void im2col(const double* x, const ConvGeometry& g, double* col) { im2col(x, g, col, 0, g.out_h); }

// Large short-lived buffers are the norm here; keep them on the heap instead of
// paying for a fresh mmap and page faults on every op.
void tune_allocator() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

#if defined(__GNUC__)
#define CTIQ_DIRECT_CONV 1

// Direct 3x3, stride 1, padding 1 kernel over a zero-padded input. Each call
// fills an OB x CW output tile held entirely in vector registers.
typedef double v8 __attribute__((vector_size(64)));

inline v8 load8(const double* p) {
  v8 v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

template <std::size_t CW, std::size_t OB, std::size_t R>
inline void direct_tile(const double* xp, std::size_t Ci, std::size_t plane, std::size_t Wp, const double* w,
                        std::size_t w_stride, const double* bias, double* y, std::size_t y_stride, std::size_t W,
                        bool accumulate) {
  constexpr std::size_t V = CW / 8;
  v8 acc[R][OB][V];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t b = 0; b < OB; ++b) {
      for (std::size_t j = 0; j < V; ++j) {
        acc[r][b][j] = v8{} + (bias ? bias[b] : 0.0);
        if (accumulate) acc[r][b][j] += load8(y + b * y_stride + r * W + 8 * j);
      }
    }
  }
  for (std::size_t c = 0; c < Ci; ++c) {
    const double* xc = xp + c * plane;
    const double* wc = w + c * 9;
    // Input row i feeds output row r through kernel row i - r.
#pragma GCC unroll 8
    for (std::size_t i = 0; i < R + 2; ++i) {
      const double* row = xc + i * Wp;
#pragma GCC unroll 3
      for (std::size_t kx = 0; kx < 3; ++kx) {
        v8 in[V];
        for (std::size_t j = 0; j < V; ++j) in[j] = load8(row + kx + 8 * j);
#pragma GCC unroll 4
        for (std::size_t r = 0; r < R; ++r) {
          if (i < r || i - r > 2) continue;
          const std::size_t ky = i - r;
#pragma GCC unroll 8
          for (std::size_t b = 0; b < OB; ++b) {
            const double wv = wc[b * w_stride + ky * 3 + kx];
            for (std::size_t j = 0; j < V; ++j) acc[r][b][j] += wv * in[j];
          }
        }
      }
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t b = 0; b < OB; ++b) {
      for (std::size_t j = 0; j < V; ++j) __builtin_memcpy(y + b * y_stride + r * W + 8 * j, &acc[r][b][j], sizeof(v8));
    }
  }
}

template <std::size_t CW, std::size_t OB>
void direct_rows(const double* xp, std::size_t Ci, std::size_t H, std::size_t W, const double* w, const double* bias,
                 std::size_t o, double* y, bool accumulate) {
  const std::size_t Wp = W + 2, plane = (H + 2) * Wp;
  constexpr std::size_t R = OB <= 4 ? 2 : 1;
  std::size_t oy = 0;
  for (; oy + R <= H; oy += R) {
    for (std::size_t ox = 0; ox < W; ox += CW) {
      direct_tile<CW, OB, R>(xp + oy * Wp + ox, Ci, plane, Wp, w + o * Ci * 9, Ci * 9, bias ? bias + o : nullptr,
                             y + o * H * W + oy * W + ox, H * W, W, accumulate);
    }
  }
  for (; oy < H; ++oy) {
    for (std::size_t ox = 0; ox < W; ox += CW) {
      direct_tile<CW, OB, 1>(xp + oy * Wp + ox, Ci, plane, Wp, w + o * Ci * 9, Ci * 9, bias ? bias + o : nullptr,
                             y + o * H * W + oy * W + ox, H * W, W, accumulate);
    }
  }
}

template <std::size_t CW>
void direct_image(const double* xp, std::size_t Ci, std::size_t H, std::size_t W, const double* w,
                  const double* bias, std::size_t Co, double* y, bool accumulate) {
  // Narrow tiles need more output channels in flight to hide FMA latency.
  constexpr std::size_t kWide = CW >= 16 ? 4 : 8;
  std::size_t o = 0;
  for (; o + kWide <= Co; o += kWide) direct_rows<CW, kWide>(xp, Ci, H, W, w, bias, o, y, accumulate);
  if (kWide == 8 && o + 4 <= Co) {
    direct_rows<CW, 4>(xp, Ci, H, W, w, bias, o, y, accumulate);
    o += 4;
  }
  switch (Co - o) {
    case 3: direct_rows<CW, 3>(xp, Ci, H, W, w, bias, o, y, accumulate); break;
    case 2: direct_rows<CW, 2>(xp, Ci, H, W, w, bias, o, y, accumulate); break;
    case 1: direct_rows<CW, 1>(xp, Ci, H, W, w, bias, o, y, accumulate); break;
    default: break;
  }
}
#endif

bool direct_eligible(const ConvGeometry& g) {
#ifdef CTIQ_DIRECT_CONV
  return g.kernel == 3 && g.stride == 1 && g.padding == 1 && g.width % 8 == 0;
#else
  (void)g;
  return false;
#endif
}

// y[n] (+)= conv3x3(x[n], w) + bias for every image; w is [Co,Ci,3,3].
void direct_conv(const double* x, std::size_t N, std::size_t Ci, std::size_t H, std::size_t W, const double* w,
                 const double* bias, std::size_t Co, double* y, bool accumulate) {
#ifdef CTIQ_DIRECT_CONV
  const std::size_t Wp = W + 2;
  // One spare element so the last unaligned load of a row never reads past the end.
  std::vector<double> xp(Ci * (H + 2) * Wp + 8, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = x + n * Ci * H * W;
    for (std::size_t c = 0; c < Ci; ++c) {
      for (std::size_t iy = 0; iy < H; ++iy) {
        std::copy(src + (c * H + iy) * W, src + (c * H + iy + 1) * W, xp.data() + (c * (H + 2) + iy + 1) * Wp + 1);
      }
    }
    double* dst = y + n * Co * H * W;
    if (W % 16 == 0) {
      direct_image<16>(xp.data(), Ci, H, W, w, bias, Co, dst, accumulate);
    } else {
      direct_image<8>(xp.data(), Ci, H, W, w, bias, Co, dst, accumulate);
    }
  }
#else
  (void)x, (void)N, (void)Ci, (void)H, (void)W, (void)w, (void)bias, (void)Co, (void)y, (void)accumulate;
#endif
}

// Weights of the adjoint 3x3 convolution: [Ci,Co,3,3] with flipped taps.
std::vector<double> adjoint_weights(const double* w, std::size_t Co, std::size_t Ci) {
  std::vector<double> out(Co * Ci * 9);
  for (std::size_t o = 0; o < Co; ++o) {
    for (std::size_t c = 0; c < Ci; ++c) {
      for (std::size_t t = 0; t < 9; ++t) out[(c * Co + o) * 9 + (8 - t)] = w[(o * Ci + c) * 9 + t];
    }
  }
  return out;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d input", input, 4);
  require_rank("conv2d weight", weight, 4);
  require_rank("conv2d bias", bias, 1);
  const std::size_t N = input.dim(0);
  const std::size_t C = input.dim(1);
  const std::size_t H = input.dim(2);
  const std::size_t W = input.dim(3);
  const std::size_t Co = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (weight.dim(1) != C) throw DimensionError("conv2d weight", 1, C, weight.dim(1), "input channels");
  if (weight.dim(3) != k) throw DimensionError("conv2d weight", 3, k, weight.dim(3), "kernel must be square");
  if (k % 2 == 0) throw DimensionError("conv2d weight", 2, k + 1, k, "kernel extent must be odd");
  if (bias.dim(0) != Co) throw DimensionError("conv2d bias", 0, Co, bias.dim(0), "output channels");
  if (stride == 0) throw DimensionError("conv2d", "stride must be at least 1");
  if (H + 2 * padding < k) throw DimensionError("conv2d input", 2, k, H + 2 * padding, "padded height below kernel");
  if (W + 2 * padding < k) throw DimensionError("conv2d input", 3, k, W + 2 * padding, "padded width below kernel");

  const ConvGeometry g{C, H, W, k, stride, padding, (H + 2 * padding - k) / stride + 1,
                       (W + 2 * padding - k) / stride + 1};
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();

  tune_allocator();
  // Tile output rows so a column block stays cache resident.
  const std::size_t tile_rows = std::clamp<std::size_t>(kColumnTile / g.out_w, 1, g.out_h);
  std::vector<double> out(N * Co * P);
  const bool direct = direct_eligible(g);
  std::vector<double> col(direct ? 0 : K * tile_rows * g.out_w);
  const ConstMap Wm(weight.data().data(), Co, K);
  const auto bv = bias.data();
  const double* xv = input.data().data();
  if (direct) direct_conv(xv, N, C, H, W, weight.data().data(), bv.data(), Co, out.data(), false);
  for (std::size_t n = 0; n < N && !direct; ++n) {
    MutMap Y(out.data() + n * Co * P, Co, P);
    for (std::size_t oy0 = 0; oy0 < g.out_h; oy0 += tile_rows) {
      const std::size_t oy1 = std::min(g.out_h, oy0 + tile_rows);
      const std::size_t cols = (oy1 - oy0) * g.out_w;
      im2col(xv + n * C * H * W, g, col.data(), oy0, oy1);
      Y.middleCols(oy0 * g.out_w, cols).noalias() = Wm * ConstMap(col.data(), K, cols);
    }
    for (std::size_t o = 0; o < Co; ++o) Y.row(o).array() += bv[o];
  }

  const bool track = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor result({N, Co, g.out_h, g.out_w}, std::move(out), track);
  if (track) {
    tape.record(result, [input, weight, bias, result, g, N, Co](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      const std::size_t K = g.rows();
      const std::size_t P = g.cols();
      const std::size_t in_size = g.channels * g.height * g.width;
      const ConstMap Wm(weight.data().data(), Co, K);
      const bool direct = direct_eligible(g);
      std::vector<double> col(K * P);
      std::vector<double> gcol(input.requires_grad() && !direct ? K * P : 0);
      double* gw = weight.requires_grad() ? t.grad_buffer(weight).data() : nullptr;
      double* gb = bias.requires_grad() ? t.grad_buffer(bias).data() : nullptr;
      double* gx = input.requires_grad() ? t.grad_buffer(input).data() : nullptr;
      if (gx && direct) {
        const auto wt = adjoint_weights(weight.data().data(), Co, g.channels);
        direct_conv(gy->data(), N, Co, g.height, g.width, wt.data(), nullptr, g.channels, gx, true);
        gx = nullptr;
      }
      for (std::size_t n = 0; n < N; ++n) {
        const ConstMap GY(gy->data() + n * Co * P, Co, P);
        if (gw) {
          im2col(input.data().data() + n * in_size, g, col.data());
          MutMap(gw, Co, K).noalias() += GY * ConstMap(col.data(), K, P).transpose();
        }
        if (gb) {
          // Plain loops: Eigen's vectorised sum peels by address, which would make results allocation dependent.
          const double* row = gy->data() + n * Co * P;
          for (std::size_t o = 0; o < Co; ++o) {
            double acc = 0.0;
            for (std::size_t q = 0; q < P; ++q) acc += row[o * P + q];
            gb[o] += acc;
          }
        }
        if (gx) {
          MutMap(gcol.data(), K, P).noalias() = Wm.transpose() * GY;
          col2im(gcol.data(), g, gx + n * in_size);
        }
      }
    });
  }
  return result;
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp01(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::clamp(v, 0.0, 1.0); },
      [](double v, double) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
}

Tensor avg_pool2d(Tape& tape, const Tensor& x) {
  require_rank("avg_pool2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2) throw DimensionError("avg_pool2d", 2, H + 1, H, "height must be even");
  if (W % 2) throw DimensionError("avg_pool2d", 3, W + 1, W, "width must be even");
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(N * C * Ho * Wo);
  const auto xv = x.data();
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const double* r0 = src + 2 * oy * W;
      const double* r1 = r0 + W;
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        dst[oy * Wo + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
      }
    }
  }
  Tensor result({N, C, Ho, Wo}, std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record(result, [x, result, N, C, H, W](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      auto gx = t.grad_buffer(x);
      const std::size_t Ho = H / 2, Wo = W / 2;
      for (std::size_t p = 0; p < N * C; ++p) {
        const double* g = gy->data() + p * Ho * Wo;
        double* dst = gx.data() + p * H * W;
        for (std::size_t iy = 0; iy < H; ++iy) {
          for (std::size_t ix = 0; ix < W; ++ix) dst[iy * W + ix] += 0.25 * g[(iy / 2) * Wo + ix / 2];
        }
      }
    });
  }
  return result;
}

Tensor upsample_nearest2d(Tape& tape, const Tensor& x) {
  require_rank("upsample_nearest2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  std::vector<double> out(N * C * Ho * Wo);
  const auto xv = x.data();
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) dst[oy * Wo + ox] = src[(oy / 2) * W + ox / 2];
    }
  }
  Tensor result({N, C, Ho, Wo}, std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record(result, [x, result, N, C, H, W](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      auto gx = t.grad_buffer(x);
      const std::size_t Ho = 2 * H, Wo = 2 * W;
      for (std::size_t p = 0; p < N * C; ++p) {
        const double* g = gy->data() + p * Ho * Wo;
        double* dst = gx.data() + p * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) dst[(oy / 2) * W + ox / 2] += g[oy * Wo + ox];
        }
      }
    });
  }
  return result;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C);
  const auto xv = x.data();
  for (std::size_t p = 0; p < N * C; ++p) {
    out[p] = std::accumulate(xv.begin() + p * HW, xv.begin() + (p + 1) * HW, 0.0) / static_cast<double>(HW);
  }
  Tensor result({N, C}, std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record(result, [x, result, HW](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      auto gx = t.grad_buffer(x);
      const double inv = 1.0 / static_cast<double>(HW);
      for (std::size_t p = 0; p < gy->size(); ++p) {
        const double g = (*gy)[p] * inv;
        for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += g;
      }
    });
  }
  return result;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  for (std::size_t axis : {0u, 2u, 3u}) {
    if (a.dim(axis) != b.dim(axis)) throw DimensionError("concat_channels", axis, a.dim(axis), b.dim(axis));
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<double> out(N * (Ca + Cb) * HW);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.begin() + n * Ca * HW, Ca * HW, out.begin() + n * (Ca + Cb) * HW);
    std::copy_n(bv.begin() + n * Cb * HW, Cb * HW, out.begin() + (n * (Ca + Cb) + Ca) * HW);
  }
  const bool track = a.requires_grad() || b.requires_grad();
  Tensor result({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), track);
  if (track) {
    tape.record(result, [a, b, result, N, Ca, Cb, HW](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      double* ga = a.requires_grad() ? t.grad_buffer(a).data() : nullptr;
      double* gb = b.requires_grad() ? t.grad_buffer(b).data() : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        const double* __restrict g = gy->data() + n * (Ca + Cb) * HW;
        if (ga) {
          double* __restrict dst = ga + n * Ca * HW;
          for (std::size_t i = 0; i < Ca * HW; ++i) dst[i] += g[i];
        }
        if (gb) {
          double* __restrict dst = gb + n * Cb * HW;
          for (std::size_t i = 0; i < Cb * HW; ++i) dst[i] += g[Ca * HW + i];
        }
      }
    });
  }
  return result;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear input", x, 2);
  require_rank("linear weight", weight, 2);
  require_rank("linear bias", bias, 1);
  const std::size_t N = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  if (weight.dim(1) != In) throw DimensionError("linear weight", 1, In, weight.dim(1), "input features");
  if (bias.dim(0) != Out) throw DimensionError("linear bias", 0, Out, bias.dim(0), "output features");
  std::vector<double> out(N * Out);
  MutMap Y(out.data(), N, Out);
  Y.noalias() = ConstMap(x.data().data(), N, In) * ConstMap(weight.data().data(), Out, In).transpose();
  const auto bv = bias.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Out; ++o) Y(n, o) += bv[o];
  }
  const bool track = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor result({N, Out}, std::move(out), track);
  if (track) {
    tape.record(result, [x, weight, bias, result, N, In, Out](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      const ConstMap GY(gy->data(), N, Out);
      if (x.requires_grad()) {
        MutMap(t.grad_buffer(x).data(), N, In).noalias() += GY * ConstMap(weight.data().data(), Out, In);
      }
      if (weight.requires_grad()) {
        MutMap(t.grad_buffer(weight).data(), Out, In).noalias() += GY.transpose() * ConstMap(x.data().data(), N, In);
      }
      if (bias.requires_grad()) {
        auto gb = t.grad_buffer(bias);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t o = 0; o < Out; ++o) gb[o] += GY(n, o);
        }
      }
    });
  }
  return result;
}

namespace {

template <class Combine, class DA, class DB>
Tensor binary(Tape& tape, const char* op, const Tensor& a, const Tensor& b, Combine f, DA da, DB db) {
  require_same_shape(op, a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  const bool track = a.requires_grad() || b.requires_grad();
  Tensor result(a.shape(), std::move(out), track);
  if (track) {
    tape.record(result, [a, b, result, da, db](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      const double* __restrict g = gy->data();
      const double* __restrict av = a.data().data();
      const double* __restrict bv = b.data().data();
      const std::size_t n = gy->size();
      if (a.requires_grad()) {
        double* __restrict ga = t.grad_buffer(a).data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(av[i], bv[i]);
      }
      if (b.requires_grad()) {
        double* __restrict gb = t.grad_buffer(b).data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(av[i], bv[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor mul_scalar(Tape& tape, const Tensor& x, double s) {
  return unary(
      tape, x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double s) {
  return unary(
      tape, x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  Tensor view = x.reshaped(std::move(shape));
  if (!x.requires_grad()) return view;
  Tensor result = view.with_grad();
  tape.record(result, [x, result](Tape& t) {
    const auto* gy = t.find_grad(result);
    if (!gy) return;
    const double* __restrict g = gy->data();
    double* __restrict gx = t.grad_buffer(x).data();
    for (std::size_t i = 0, n = gy->size(); i < n; ++i) gx[i] += g[i];
  });
  return result;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const auto xv = x.data();
  Tensor result = Tensor::scalar(std::accumulate(xv.begin(), xv.end(), 0.0), x.requires_grad());
  if (x.requires_grad()) {
    tape.record(result, [x, result](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      for (double& g : t.grad_buffer(x)) g += (*gy)[0];
    });
  }
  return result;
}

Tensor mean(Tape& tape, const Tensor& x) {
  return mul_scalar(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  const bool track = a.requires_grad() || b.requires_grad();
  Tensor result = Tensor::scalar(acc / n, track);
  if (track) {
    tape.record(result, [a, b, result, n](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy) return;
      const double scale = 2.0 * (*gy)[0] / n;
      const auto av = a.data();
      const auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale * (av[i] - bv[i]);
      }
      if (b.requires_grad()) {
        auto gb = t.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= scale * (av[i] - bv[i]);
      }
    });
  }
  return result;
}

Tensor l2_norm(Tape& tape, const Tensor& x) {
  const auto xv = x.data();
  double acc = 0.0;
  for (double v : xv) acc += v * v;
  const double norm = std::sqrt(acc);
  Tensor result = Tensor::scalar(norm, x.requires_grad());
  if (x.requires_grad()) {
    tape.record(result, [x, result, norm](Tape& t) {
      const auto* gy = t.find_grad(result);
      if (!gy || norm == 0.0) return;
      auto gx = t.grad_buffer(x);
      const auto xv = x.data();
      const double scale = (*gy)[0] / norm;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += scale * xv[i];
    });
  }
  return result;
}

}  // namespace ctiq::ops
