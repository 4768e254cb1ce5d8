#include "icessm/wavelet.hpp"

#include <algorithm>

#include "icessm/error.hpp"

namespace icessm::wavelet {

using nd::Tape;

namespace {

// Both kernels work on `planes` stacked HxW images. Bands are written as
// planes x {ll, lh, hl, hh} x (H/2 x W/2).
void analysis(const float* in, float* bands, std::size_t planes, std::size_t h, std::size_t w) {
  const std::size_t h2 = h / 2, w2 = w / 2, q = h2 * w2;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = in + p * h * w;
    float* dst = bands + p * 4 * q;
    for (std::size_t i = 0; i < h2; ++i) {
      for (std::size_t j = 0; j < w2; ++j) {
        const float a = src[(2 * i) * w + 2 * j], b = src[(2 * i) * w + 2 * j + 1];
        const float c = src[(2 * i + 1) * w + 2 * j], d = src[(2 * i + 1) * w + 2 * j + 1];
        const std::size_t k = i * w2 + j;
        dst[k] = 0.5f * (a + b + c + d);
        dst[q + k] = 0.5f * (a - b + c - d);
        dst[2 * q + k] = 0.5f * (a + b - c - d);
        dst[3 * q + k] = 0.5f * (a - b - c + d);
      }
    }
  }
}

void synthesis(const float* bands, float* out, std::size_t planes, std::size_t h, std::size_t w) {
  const std::size_t h2 = h / 2, w2 = w / 2, q = h2 * w2;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = bands + p * 4 * q;
    float* dst = out + p * h * w;
    for (std::size_t i = 0; i < h2; ++i) {
      for (std::size_t j = 0; j < w2; ++j) {
        const std::size_t k = i * w2 + j;
        const float ll = src[k], lh = src[q + k], hl = src[2 * q + k], hh = src[3 * q + k];
        dst[(2 * i) * w + 2 * j] = 0.5f * (ll + lh + hl + hh);
        dst[(2 * i) * w + 2 * j + 1] = 0.5f * (ll - lh + hl - hh);
        dst[(2 * i + 1) * w + 2 * j] = 0.5f * (ll + lh - hl - hh);
        dst[(2 * i + 1) * w + 2 * j + 1] = 0.5f * (ll - lh - hl + hh);
      }
    }
  }
}

struct Geometry {
  std::size_t planes, h, w;
};

Geometry spatial(const nd::Shape& shape, const char* op) {
  if (shape.size() < 2) throw ShapeError(std::string(op) + ": need at least 2 axes");
  const std::size_t h = shape[shape.size() - 2], w = shape.back();
  if (h == 0 || w == 0) throw ShapeError(std::string(op) + ": empty spatial axes");
  return {nd::numel(shape) / (h * w), h, w};
}

Tensor pad_tensor(const Tensor& x) {
  const Geometry g = spatial(x.shape(), "pad_even");
  const std::size_t ph = g.h + g.h % 2, pw = g.w + g.w % 2;
  nd::Shape shape = x.shape();
  shape[shape.size() - 2] = ph;
  shape.back() = pw;
  Tensor out(shape);
  for (std::size_t p = 0; p < g.planes; ++p)
    for (std::size_t i = 0; i < ph; ++i)
      for (std::size_t j = 0; j < pw; ++j)
        out[(p * ph + i) * pw + j] =
            x[(p * g.h + std::min(i, g.h - 1)) * g.w + std::min(j, g.w - 1)];
  return out;
}

}  // namespace

DwtPyramid dwt2(const Tensor& x, Basis basis, bool pad_odd) {
  Geometry g = spatial(x.shape(), "dwt2");
  if ((g.h % 2 || g.w % 2) && !pad_odd) {
    throw ShapeError("dwt2: odd spatial size " + nd::to_string(x.shape()) + " without padding");
  }
  const Tensor even = (g.h % 2 || g.w % 2) ? pad_tensor(x) : x;
  g = spatial(even.shape(), "dwt2");
  Tensor bands({g.planes, 4, g.h / 2, g.w / 2});
  analysis(even.data(), bands.data(), g.planes, g.h, g.w);

  nd::Shape sub = even.shape();
  sub[sub.size() - 2] = g.h / 2;
  sub.back() = g.w / 2;
  const std::size_t q = (g.h / 2) * (g.w / 2);
  DwtPyramid p;
  p.basis = basis;
  Tensor* outs[4] = {&p.ll, &p.lh, &p.hl, &p.hh};
  for (std::size_t b = 0; b < 4; ++b) {
    *outs[b] = Tensor(sub);
    for (std::size_t pl = 0; pl < g.planes; ++pl)
      std::copy_n(bands.data() + (pl * 4 + b) * q, q, outs[b]->data() + pl * q);
  }
  return p;
}

Tensor idwt2(const DwtPyramid& p) {
  const nd::Shape& sub = p.ll.shape();
  if (p.lh.shape() != sub || p.hl.shape() != sub || p.hh.shape() != sub) {
    throw ShapeError("idwt2: subband shapes differ");
  }
  const Geometry g = spatial(sub, "idwt2");
  const std::size_t q = g.h * g.w;
  Tensor bands({g.planes, 4, g.h, g.w});
  const Tensor* ins[4] = {&p.ll, &p.lh, &p.hl, &p.hh};
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t pl = 0; pl < g.planes; ++pl)
      std::copy_n(ins[b]->data() + pl * q, q, bands.data() + (pl * 4 + b) * q);
  nd::Shape full = sub;
  full[full.size() - 2] = 2 * g.h;
  full.back() = 2 * g.w;
  Tensor out(full);
  synthesis(bands.data(), out.data(), g.planes, 2 * g.h, 2 * g.w);
  return out;
}

Var dwt2(Var x) {
  const Geometry g = spatial(x.shape(), "dwt2");
  if (g.h % 2 || g.w % 2) throw ShapeError("dwt2: odd spatial size " + nd::to_string(x.shape()));
  nd::Shape shape(x.shape().begin(), x.shape().end() - 2);
  shape.insert(shape.end(), {4, g.h / 2, g.w / 2});
  Tensor out(shape);
  analysis(x.value().data(), out.data(), g.planes, g.h, g.w);
  // The transform is orthonormal, so its adjoint is the synthesis.
  return x.tape->record(std::move(out), {x}, [x, g](Tape& tape, const Tensor& grad) {
    Tensor back(tape.value(x).shape());
    synthesis(grad.data(), back.data(), g.planes, g.h, g.w);
    tape.accumulate(x, back);
  });
}

Var idwt2(Var bands) {
  const nd::Shape& in = bands.shape();
  if (in.size() < 3 || in[in.size() - 3] != 4) {
    throw ShapeError("idwt2: expected [..., 4, h, w], got " + nd::to_string(in));
  }
  const std::size_t h = 2 * in[in.size() - 2], w = 2 * in.back();
  nd::Shape shape(in.begin(), in.end() - 3);
  shape.insert(shape.end(), {h, w});
  const std::size_t planes = nd::numel(shape) / (h * w);
  Tensor out(shape);
  synthesis(bands.value().data(), out.data(), planes, h, w);
  return bands.tape->record(std::move(out), {bands},
                            [bands, planes, h, w](Tape& tape, const Tensor& grad) {
                              Tensor back(tape.value(bands).shape());
                              analysis(grad.data(), back.data(), planes, h, w);
                              tape.accumulate(bands, back);
                            });
}

Var pad_even(Var x) {
  const Geometry g = spatial(x.shape(), "pad_even");
  if (g.h % 2 == 0 && g.w % 2 == 0) return x;
  Tensor out = pad_tensor(x.value());
  const std::size_t ph = g.h + g.h % 2, pw = g.w + g.w % 2;
  return x.tape->record(std::move(out), {x}, [x, g, ph, pw](Tape& tape, const Tensor& grad) {
    Tensor& gx = tape.grad_slot(x);
    for (std::size_t p = 0; p < g.planes; ++p)
      for (std::size_t i = 0; i < ph; ++i)
        for (std::size_t j = 0; j < pw; ++j)
          gx[(p * g.h + std::min(i, g.h - 1)) * g.w + std::min(j, g.w - 1)] +=
              grad[(p * ph + i) * pw + j];
  });
}

Var freq_branch(Var x, Var gains) {
  const nd::Shape& shape = x.shape();
  if (shape.size() != 4) throw ShapeError("freq_branch: expected [T,C,H,W], got " + nd::to_string(shape));
  const std::size_t t = shape[0], c = shape[1], h = shape[2], w = shape[3];
  if (gains.shape() != nd::Shape{c, 3}) {
    throw ShapeError("freq_branch: gains " + nd::to_string(gains.shape()) + " for " +
                     std::to_string(c) + " channels");
  }
  Tape& tape = *x.tape;
  Var padded = pad_even(x);
  const std::size_t ph = h + h % 2, pw = w + w % 2;
  Var bands = reshape(dwt2(padded), {t, c * 4, ph / 2, pw / 2});
  Var band_gain = reshape(nd::concat({tape.constant(Tensor({c, 1}, 1.0f)), gains}, 1), {c * 4});
  Var out = idwt2(reshape(nd::mul_along(bands, band_gain, 1), {t, c, 4, ph / 2, pw / 2}));
  if (ph != h) out = nd::slice(out, 2, 0, h);
  if (pw != w) out = nd::slice(out, 3, 0, w);
  return out;
}

}  // namespace icessm::wavelet
