#pragma once

// Differentiable operations on tape values. Every op records its output and a
// backward rule on the tape owning its inputs.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "icessm/nd/tape.hpp"

namespace icessm::nd {

enum class PadMode { zero, replicate };

// --- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, float factor);
Var add_scalar(Var x, float value);
Var abs(Var x);
Var square(Var x);
Var exp(Var x);
Var log(Var x);
Var sigmoid(Var x);
Var silu(Var x);
/// log(1 + e^x); strictly positive.
Var softplus(Var x);
Var leaky_relu(Var x, float slope = 0.01f);

// --- reductions ------------------------------------------------------------
Var sum(Var x);
Var mean(Var x);
/// Mean over the listed axes, which are removed from the shape.
Var reduce_mean(Var x, std::vector<std::size_t> axes);
/// Mean over the last two (spatial) axes.
Var global_avg_pool(Var x);

// --- broadcasting along one axis -------------------------------------------
/// x * a where a is 1-D of length x.dim(axis).
Var mul_along(Var x, Var a, std::size_t axis);
Var add_along(Var x, Var a, std::size_t axis);

// --- shape -----------------------------------------------------------------
Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<std::size_t> axes);
/// out[i] = x[index[i]] along axis 0; repeated indices scatter-add on backward.
Var gather_rows(Var x, std::span<const std::uint32_t> index);
/// gather_rows restricted to bijective permutations.
Var gather_permute(Var x, std::span<const std::uint32_t> perm);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t length);
std::vector<Var> chunk(Var x, std::size_t count, std::size_t axis);

// --- layers ----------------------------------------------------------------
/// x[..., Din] * w[Din, Dout] + b[Dout].
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  PadMode pad_mode = PadMode::zero;
  std::size_t groups = 1;
};

/// Cross-correlation. x[N,Cin,H,W], kernels[Cout,Cin/groups,KH,KW], b[Cout].
Var conv2d(Var x, Var kernels, std::optional<Var> b, const Conv2dOptions& options);
/// Adjoint of conv2d (zero padding) with the same geometry.
/// x[N,Cin,H,W], kernels[Cin,Cout,KH,KW], output (H-1)*stride - 2*padding + KH.
Var conv_transpose2d(Var x, Var kernels, std::optional<Var> b, std::size_t stride,
                     std::size_t padding);
/// Per-channel 2D convolution; kernels[C,1,K,K], "same" output size for odd K.
Var depthwise_conv2d(Var x, Var kernels, std::optional<Var> b, PadMode pad_mode);

/// Depthwise causal convolution along the sequence: x[L,D], kernels[D,K], b[D].
/// y[t,d] = b[d] + sum_j kernels[d,j] * x[t-K+1+j, d], zero before the start.
Var causal_conv1d(Var x, Var kernels, std::optional<Var> b);
/// Kernel-size-1 grouped convolution over a channel vector x[G*S]:
/// weights[G,S,S] mix only within each consecutive group of S channels.
Var group_conv1d(Var x, Var weights, std::optional<Var> b, std::size_t group_size = 3);

/// Normalises over the last axis.
Var layernorm(Var x, Var gamma, Var beta, float eps = 1e-5f);
/// x[N,C,...]: normalises over each group of C/groups channels and all trailing axes.
Var groupnorm(Var x, std::size_t groups, Var gamma, Var beta, float eps = 1e-5f);

/// Forward difference x[i+1] - x[i] along `axis`; 0 at the last index
/// (replicate boundary).
Var forward_diff(Var x, std::size_t axis);

}  // namespace icessm::nd
