#pragma once

// One-level 2D Haar transform and the frequency branch built on it.

#include "icessm/nd/ops.hpp"
#include "icessm/nd/tensor.hpp"

namespace icessm::wavelet {

using nd::Tensor;
using nd::Var;

enum class Basis { haar };

/// Subbands of x[..., H, W], each [..., H/2, W/2]. For a 2x2 block [[a,b],[c,d]]:
/// ll = (a+b+c+d)/2, lh = (a-b+c-d)/2, hl = (a+b-c-d)/2, hh = (a-b-c+d)/2.
struct DwtPyramid {
  Tensor ll, lh, hl, hh;
  Basis basis = Basis::haar;
};

/// Throws ShapeError on odd H or W unless `pad_odd`, which replicates the last
/// row/column first.
DwtPyramid dwt2(const Tensor& x, Basis basis = Basis::haar, bool pad_odd = false);
Tensor idwt2(const DwtPyramid& p);

/// Differentiable transform: x[..., H, W] -> [..., 4, H/2, W/2] with the
/// subbands stacked in (ll, lh, hl, hh) order. H and W must be even.
Var dwt2(Var x);
/// Inverse of the stacked layout above.
Var idwt2(Var bands);

/// Copies the last row/column so both spatial sizes become even.
Var pad_even(Var x);

/// x[T,C,H,W] -> dwt2 per frame and channel, detail bands scaled by
/// gains[C,3] (lh, hl, hh), inverse transform. Odd sizes are padded by
/// replication and cropped back.
Var freq_branch(Var x, Var gains);

}  // namespace icessm::wavelet
