#pragma once

#include <cstddef>

#include "ctiq/tensor.hpp"

/// Differentiable primitives. Every op records itself on `tape` when any input
/// requires grad; otherwise it is a plain computation and the tape is untouched.
/// There is no implicit broadcasting beyond the bias of conv2d/linear and the
/// scalar ops.
namespace ctiq::ops {

/// 2-D cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,k,k] with odd k,
/// bias [Cout]. Output extent is (H + 2*padding - k) / stride + 1 per axis.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// Clamp to [0,1]. Gradient passes strictly inside (0,1), zero at or beyond the bounds.
Tensor clamp01(Tape& tape, const Tensor& x);

/// 2x2 average pooling with stride 2 on [N,C,H,W]; H and W must be even.
Tensor avg_pool2d(Tape& tape, const Tensor& x);
/// Nearest-neighbour x2 upsampling on [N,C,H,W].
Tensor upsample_nearest2d(Tape& tape, const Tensor& x);
/// [N,C,H,W] -> [N,C], mean over spatial positions.
Tensor global_avg_pool(Tape& tape, const Tensor& x);
/// Concatenate [N,Ca,H,W] and [N,Cb,H,W] along channels.
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);

/// x [N,In], weight [Out,In], bias [Out] -> [N,Out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul_scalar(Tape& tape, const Tensor& x, double s);
Tensor add_scalar(Tape& tape, const Tensor& x, double s);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
/// mean((a - b)^2) over all elements.
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b);
/// Euclidean norm of all elements. Gradient at the origin is taken as zero.
Tensor l2_norm(Tape& tape, const Tensor& x);

}  // namespace ctiq::ops
