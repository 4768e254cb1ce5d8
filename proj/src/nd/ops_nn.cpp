#include <algorithm>
#include <cmath>

#include "icessm/error.hpp"
#include "icessm/nd/ops.hpp"

namespace icessm::nd {

namespace {

std::vector<Var> with_optional(std::initializer_list<Var> vars, const std::optional<Var>& b) {
  std::vector<Var> out(vars);
  if (b) out.push_back(*b);
  return out;
}

void require_rank(const Var& v, std::size_t rank, const char* op, const char* what) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(v.shape()));
  }
}

// Source coordinate along one padded axis, or -1 when it falls in zero padding.
std::vector<long> axis_map(std::size_t out_len, std::size_t in_len, std::size_t k,
                           std::size_t stride, std::size_t padding, PadMode mode) {
  std::vector<long> map(out_len * k);
  for (std::size_t o = 0; o < out_len; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      long src = static_cast<long>(o * stride + j) - static_cast<long>(padding);
      if (src < 0 || src >= static_cast<long>(in_len)) {
        src = mode == PadMode::zero ? -1 : std::clamp(src, 0L, static_cast<long>(in_len) - 1);
      }
      map[o * k + j] = src;
    }
  }
  return map;
}

}  // namespace

Var linear(Var x, Var w, std::optional<Var> b) {
  const Shape& xs = x.shape();
  require_rank(w, 2, "linear", "weight");
  if (xs.empty() || xs.back() != w.shape()[0]) {
    throw ShapeError("linear: input " + to_string(xs) + " vs weight " + to_string(w.shape()));
  }
  const std::size_t din = w.shape()[0];
  const std::size_t dout = w.shape()[1];
  if (b && (b->value().rank() != 1 || b->size() != dout)) {
    throw ShapeError("linear: bias " + to_string(b->shape()) + " vs out width " +
                     std::to_string(dout));
  }
  const std::size_t rows = x.size() / din;
  Shape out_shape = xs;
  out_shape.back() = dout;
  Tensor out(out_shape);
  const float* xv = x.value().data();
  const float* wv = w.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    float* orow = out.data() + r * dout;
    if (b) std::copy_n(b->value().data(), dout, orow);
    const float* xrow = xv + r * din;
    for (std::size_t i = 0; i < din; ++i) {
      const float xi = xrow[i];
      if (xi == 0.0f) continue;
      const float* wrow = wv + i * dout;
      for (std::size_t o = 0; o < dout; ++o) orow[o] += xi * wrow[o];
    }
  }
  return x.tape->record(
      std::move(out), with_optional({x, w}, b),
      [x, w, b, rows, din, dout](Tape& tape, const Tensor& g) {
        const float* xv = tape.value(x).data();
        const float* wv = tape.value(w).data();
        if (tape.requires_grad(x)) {
          float* gx = tape.grad_slot(x).data();
          for (std::size_t r = 0; r < rows; ++r) {
            const float* grow = g.data() + r * dout;
            for (std::size_t i = 0; i < din; ++i) {
              const float* wrow = wv + i * dout;
              float acc = 0.0f;
              for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * wrow[o];
              gx[r * din + i] += acc;
            }
          }
        }
        if (tape.requires_grad(w)) {
          float* gw = tape.grad_slot(w).data();
          for (std::size_t r = 0; r < rows; ++r) {
            const float* grow = g.data() + r * dout;
            for (std::size_t i = 0; i < din; ++i) {
              const float xi = xv[r * din + i];
              if (xi == 0.0f) continue;
              float* gwrow = gw + i * dout;
              for (std::size_t o = 0; o < dout; ++o) gwrow[o] += xi * grow[o];
            }
          }
        }
        if (b && tape.requires_grad(*b)) {
          float* gb = tape.grad_slot(*b).data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < dout; ++o) gb[o] += g[r * dout + o];
          }
        }
      });
}

Var conv2d(Var x, Var kernels, std::optional<Var> b, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(kernels, 4, "conv2d", "kernels");
  const Shape& xs = x.shape();
  const Shape& ks = kernels.shape();
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::size_t cout = ks[0], cin_g = ks[1], kh = ks[2], kw = ks[3];
  const std::size_t groups = opt.groups;
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g) {
    throw ShapeError("conv2d: channels " + to_string(xs) + " / kernels " + to_string(ks) +
                     " inconsistent with groups=" + std::to_string(groups));
  }
  if (h + 2 * opt.padding < kh || wd + 2 * opt.padding < kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (b && (b->value().rank() != 1 || b->size() != cout)) throw ShapeError("conv2d: bias size");
  const std::size_t ho = (h + 2 * opt.padding - kh) / opt.stride + 1;
  const std::size_t wo = (wd + 2 * opt.padding - kw) / opt.stride + 1;
  const auto rows = axis_map(ho, h, kh, opt.stride, opt.padding, opt.pad_mode);
  const auto cols = axis_map(wo, wd, kw, opt.stride, opt.padding, opt.pad_mode);
  const std::size_t cout_g = cout / groups;

  Tensor out({n, cout, ho, wo});
  const float* xv = x.value().data();
  const float* kv = kernels.value().data();
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t co = 0; co < cout; ++co) {
      const std::size_t g = co / cout_g;
      float* oplane = out.data() + (ni * cout + co) * ho * wo;
      if (b) std::fill_n(oplane, ho * wo, b->value()[co]);
      for (std::size_t cl = 0; cl < cin_g; ++cl) {
        const std::size_t ci = g * cin_g + cl;
        const float* xplane = xv + (ni * cin + ci) * h * wd;
        const float* kplane = kv + (co * cin_g + cl) * kh * kw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long sy = rows[oy * kh + ky];
            if (sy < 0) continue;
            const float* xrow = xplane + static_cast<std::size_t>(sy) * wd;
            const float* krow = kplane + ky * kw;
            float* orow = oplane + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              float acc = 0.0f;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long sx = cols[ox * kw + kx];
                if (sx >= 0) acc += xrow[sx] * krow[kx];
              }
              orow[ox] += acc;
            }
          }
        }
      }
    }
  }
  return x.tape->record(
      std::move(out), with_optional({x, kernels}, b),
      [=](Tape& tape, const Tensor& gout) {
        const float* xv = tape.value(x).data();
        const float* kv = tape.value(kernels).data();
        float* gx = tape.requires_grad(x) ? tape.grad_slot(x).data() : nullptr;
        float* gk = tape.requires_grad(kernels) ? tape.grad_slot(kernels).data() : nullptr;
        float* gb = (b && tape.requires_grad(*b)) ? tape.grad_slot(*b).data() : nullptr;
        for (std::size_t ni = 0; ni < n; ++ni) {
          for (std::size_t co = 0; co < cout; ++co) {
            const std::size_t g = co / cout_g;
            const float* gplane = gout.data() + (ni * cout + co) * ho * wo;
            if (gb) {
              for (std::size_t i = 0; i < ho * wo; ++i) gb[co] += gplane[i];
            }
            for (std::size_t cl = 0; cl < cin_g; ++cl) {
              const std::size_t ci = g * cin_g + cl;
              const std::size_t xoff = (ni * cin + ci) * h * wd;
              const std::size_t koff = (co * cin_g + cl) * kh * kw;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long sy = rows[oy * kh + ky];
                  if (sy < 0) continue;
                  const std::size_t xrow = xoff + static_cast<std::size_t>(sy) * wd;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const float go = gplane[oy * wo + ox];
                    if (go == 0.0f) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const long sx = cols[ox * kw + kx];
                      if (sx < 0) continue;
                      if (gx) gx[xrow + static_cast<std::size_t>(sx)] += go * kv[koff + ky * kw + kx];
                      if (gk) gk[koff + ky * kw + kx] += go * xv[xrow + static_cast<std::size_t>(sx)];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var conv_transpose2d(Var x, Var kernels, std::optional<Var> b, std::size_t stride,
                     std::size_t padding) {
  require_rank(x, 4, "conv_transpose2d", "input");
  require_rank(kernels, 4, "conv_transpose2d", "kernels");
  const Shape& xs = x.shape();
  const Shape& ks = kernels.shape();
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  if (ks[0] != xs[1]) {
    throw ShapeError("conv_transpose2d: input " + to_string(xs) + " vs kernels " + to_string(ks));
  }
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::size_t cout = ks[1], kh = ks[2], kw = ks[3];
  if ((h - 1) * stride + kh <= 2 * padding || (wd - 1) * stride + kw <= 2 * padding) {
    throw ShapeError("conv_transpose2d: padding consumes the whole output");
  }
  if (b && (b->value().rank() != 1 || b->size() != cout)) {
    throw ShapeError("conv_transpose2d: bias size");
  }
  const std::size_t ho = (h - 1) * stride + kh - 2 * padding;
  const std::size_t wo = (wd - 1) * stride + kw - 2 * padding;
  // Output coordinate for (input coordinate, tap), or -1 when cropped.
  auto out_map = [](std::size_t in_len, std::size_t k, std::size_t s, std::size_t p,
                    std::size_t out_len) {
    std::vector<long> m(in_len * k);
    for (std::size_t i = 0; i < in_len; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const long o = static_cast<long>(i * s + j) - static_cast<long>(p);
        m[i * k + j] = (o >= 0 && o < static_cast<long>(out_len)) ? o : -1;
      }
    }
    return m;
  };
  const auto rows = out_map(h, kh, stride, padding, ho);
  const auto cols = out_map(wd, kw, stride, padding, wo);

  Tensor out({n, cout, ho, wo});
  const float* xv = x.value().data();
  const float* kv = kernels.value().data();
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t co = 0; co < cout; ++co) {
      float* oplane = out.data() + (ni * cout + co) * ho * wo;
      if (b) std::fill_n(oplane, ho * wo, b->value()[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const float* xplane = xv + (ni * cin + ci) * h * wd;
        const float* kplane = kv + (ci * cout + co) * kh * kw;
        for (std::size_t iy = 0; iy < h; ++iy) {
          for (std::size_t ix = 0; ix < wd; ++ix) {
            const float xval = xplane[iy * wd + ix];
            if (xval == 0.0f) continue;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long oy = rows[iy * kh + ky];
              if (oy < 0) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ox = cols[ix * kw + kx];
                if (ox < 0) continue;
                oplane[static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)] +=
                    xval * kplane[ky * kw + kx];
              }
            }
          }
        }
      }
    }
  }
  return x.tape->record(
      std::move(out), with_optional({x, kernels}, b),
      [=](Tape& tape, const Tensor& gout) {
        const float* xv = tape.value(x).data();
        const float* kv = tape.value(kernels).data();
        float* gx = tape.requires_grad(x) ? tape.grad_slot(x).data() : nullptr;
        float* gk = tape.requires_grad(kernels) ? tape.grad_slot(kernels).data() : nullptr;
        float* gb = (b && tape.requires_grad(*b)) ? tape.grad_slot(*b).data() : nullptr;
        for (std::size_t ni = 0; ni < n; ++ni) {
          for (std::size_t co = 0; co < cout; ++co) {
            const float* gplane = gout.data() + (ni * cout + co) * ho * wo;
            if (gb) {
              for (std::size_t i = 0; i < ho * wo; ++i) gb[co] += gplane[i];
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t xoff = (ni * cin + ci) * h * wd;
              const std::size_t koff = (ci * cout + co) * kh * kw;
              for (std::size_t iy = 0; iy < h; ++iy) {
                for (std::size_t ix = 0; ix < wd; ++ix) {
                  float acc_x = 0.0f;
                  const float xval = xv[xoff + iy * wd + ix];
                  for (std::size_t ky = 0; ky < kh; ++ky) {
                    const long oy = rows[iy * kh + ky];
                    if (oy < 0) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const long ox = cols[ix * kw + kx];
                      if (ox < 0) continue;
                      const float go =
                          gplane[static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)];
                      acc_x += go * kv[koff + ky * kw + kx];
                      if (gk) gk[koff + ky * kw + kx] += go * xval;
                    }
                  }
                  if (gx) gx[xoff + iy * wd + ix] += acc_x;
                }
              }
            }
          }
        }
      });
}

Var depthwise_conv2d(Var x, Var kernels, std::optional<Var> b, PadMode pad_mode) {
  require_rank(x, 4, "depthwise_conv2d", "input");
  require_rank(kernels, 4, "depthwise_conv2d", "kernels");
  const Shape& ks = kernels.shape();
  if (ks[1] != 1 || ks[2] != ks[3] || ks[2] % 2 == 0) {
    throw ShapeError("depthwise_conv2d: kernels must be [C,1,K,K] with odd K, got " +
                     to_string(ks));
  }
  Conv2dOptions opt;
  opt.padding = ks[2] / 2;
  opt.pad_mode = pad_mode;
  opt.groups = x.shape()[1];
  return conv2d(x, kernels, b, opt);
}

Var causal_conv1d(Var x, Var kernels, std::optional<Var> b) {
  require_rank(x, 2, "causal_conv1d", "input");
  require_rank(kernels, 2, "causal_conv1d", "kernels");
  const std::size_t len = x.shape()[0];
  const std::size_t d = x.shape()[1];
  const std::size_t k = kernels.shape()[1];
  if (kernels.shape()[0] != d || k == 0) {
    throw ShapeError("causal_conv1d: kernels " + to_string(kernels.shape()) + " vs input " +
                     to_string(x.shape()));
  }
  if (b && b->size() != d) throw ShapeError("causal_conv1d: bias size");
  const float* xv = x.value().data();
  const float* kv = kernels.value().data();
  Tensor out({len, d});
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      float acc = b ? b->value()[c] : 0.0f;
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t + j) - static_cast<long>(k - 1);
        if (src >= 0) acc += kv[c * k + j] * xv[static_cast<std::size_t>(src) * d + c];
      }
      out[t * d + c] = acc;
    }
  }
  return x.tape->record(
      std::move(out), with_optional({x, kernels}, b), [=](Tape& tape, const Tensor& g) {
        const float* xv = tape.value(x).data();
        const float* kv = tape.value(kernels).data();
        float* gx = tape.requires_grad(x) ? tape.grad_slot(x).data() : nullptr;
        float* gk = tape.requires_grad(kernels) ? tape.grad_slot(kernels).data() : nullptr;
        float* gb = (b && tape.requires_grad(*b)) ? tape.grad_slot(*b).data() : nullptr;
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t c = 0; c < d; ++c) {
            const float go = g[t * d + c];
            if (gb) gb[c] += go;
            for (std::size_t j = 0; j < k; ++j) {
              const long src = static_cast<long>(t + j) - static_cast<long>(k - 1);
              if (src < 0) continue;
              const std::size_t si = static_cast<std::size_t>(src) * d + c;
              if (gx) gx[si] += go * kv[c * k + j];
              if (gk) gk[c * k + j] += go * xv[si];
            }
          }
        }
      });
}

Var group_conv1d(Var x, Var weights, std::optional<Var> b, std::size_t group_size) {
  require_rank(x, 1, "group_conv1d", "input");
  require_rank(weights, 3, "group_conv1d", "weights");
  const std::size_t channels = x.size();
  if (group_size == 0 || channels % group_size != 0) {
    throw ShapeError("group_conv1d: " + std::to_string(channels) +
                     " channels not divisible by group size " + std::to_string(group_size));
  }
  const std::size_t groups = channels / group_size;
  const Shape& ws = weights.shape();
  if (ws[0] != groups || ws[1] != group_size || ws[2] != group_size) {
    throw ShapeError("group_conv1d: weights " + to_string(ws) + " for " +
                     std::to_string(groups) + " groups of " + std::to_string(group_size));
  }
  if (b && b->size() != channels) throw ShapeError("group_conv1d: bias size");
  const std::size_t s = group_size;
  const float* xv = x.value().data();
  const float* wv = weights.value().data();
  Tensor out({channels});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t o = 0; o < s; ++o) {
      float acc = b ? b->value()[g * s + o] : 0.0f;
      for (std::size_t i = 0; i < s; ++i) acc += wv[(g * s + o) * s + i] * xv[g * s + i];
      out[g * s + o] = acc;
    }
  }
  return x.tape->record(
      std::move(out), with_optional({x, weights}, b), [=](Tape& tape, const Tensor& gout) {
        const float* xv = tape.value(x).data();
        const float* wv = tape.value(weights).data();
        float* gx = tape.requires_grad(x) ? tape.grad_slot(x).data() : nullptr;
        float* gw = tape.requires_grad(weights) ? tape.grad_slot(weights).data() : nullptr;
        float* gb = (b && tape.requires_grad(*b)) ? tape.grad_slot(*b).data() : nullptr;
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t o = 0; o < s; ++o) {
            const float go = gout[g * s + o];
            if (gb) gb[g * s + o] += go;
            for (std::size_t i = 0; i < s; ++i) {
              if (gx) gx[g * s + i] += go * wv[(g * s + o) * s + i];
              if (gw) gw[(g * s + o) * s + i] += go * xv[g * s + i];
            }
          }
        }
      });
}

namespace {

// Shared normalisation kernel: `count` independent segments, element e of
// segment s at base[s] + e*... is addressed through index(s, e); the affine
// parameter for an element is chosen by param(s, e).
struct NormPlan {
  std::size_t segments = 0;
  std::size_t length = 0;
  std::function<std::size_t(std::size_t, std::size_t)> index;
  std::function<std::size_t(std::size_t, std::size_t)> param;
};

Var normalize(Var x, Var gamma, Var beta, float eps, NormPlan plan) {
  const Tensor& xv = x.value();
  const std::size_t n = plan.length;
  Tensor out(xv.shape());
  std::vector<float> xhat(xv.size());
  std::vector<float> inv_std(plan.segments);
  for (std::size_t s = 0; s < plan.segments; ++s) {
    double m = 0.0;
    for (std::size_t e = 0; e < n; ++e) m += xv[plan.index(s, e)];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      const double dlt = xv[plan.index(s, e)] - m;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[s] = istd;
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t i = plan.index(s, e);
      const std::size_t p = plan.param(s, e);
      xhat[i] = static_cast<float>(xv[i] - m) * istd;
      out[i] = xhat[i] * gamma.value()[p] + beta.value()[p];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, plan, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tape, const Tensor& g) {
        const std::size_t n = plan.length;
        const Tensor& gv = tape.value(gamma);
        float* gx = tape.requires_grad(x) ? tape.grad_slot(x).data() : nullptr;
        float* gg = tape.requires_grad(gamma) ? tape.grad_slot(gamma).data() : nullptr;
        float* gb = tape.requires_grad(beta) ? tape.grad_slot(beta).data() : nullptr;
        for (std::size_t s = 0; s < plan.segments; ++s) {
          double mean_gh = 0.0;
          double mean_gh_xh = 0.0;
          for (std::size_t e = 0; e < n; ++e) {
            const std::size_t i = plan.index(s, e);
            const std::size_t p = plan.param(s, e);
            const float gh = g[i] * gv[p];
            mean_gh += gh;
            mean_gh_xh += gh * xhat[i];
            if (gg) gg[p] += g[i] * xhat[i];
            if (gb) gb[p] += g[i];
          }
          if (!gx) continue;
          mean_gh /= static_cast<double>(n);
          mean_gh_xh /= static_cast<double>(n);
          for (std::size_t e = 0; e < n; ++e) {
            const std::size_t i = plan.index(s, e);
            const float gh = g[i] * gv[plan.param(s, e)];
            gx[i] += inv_std[s] * static_cast<float>(gh - mean_gh - xhat[i] * mean_gh_xh);
          }
        }
      });
}

}  // namespace

Var layernorm(Var x, Var gamma, Var beta, float eps) {
  const Shape& xs = x.shape();
  if (xs.empty() || xs.back() == 0) throw ShapeError("layernorm: empty normalised axis");
  const std::size_t d = xs.back();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layernorm: affine parameters must have length " + std::to_string(d));
  }
  NormPlan plan;
  plan.segments = x.size() / d;
  plan.length = d;
  plan.index = [d](std::size_t s, std::size_t e) { return s * d + e; };
  plan.param = [](std::size_t, std::size_t e) { return e; };
  return normalize(x, gamma, beta, eps, std::move(plan));
}

Var groupnorm(Var x, std::size_t groups, Var gamma, Var beta, float eps) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("groupnorm: need [N,C,...]");
  const std::size_t n = xs[0];
  const std::size_t c = xs[1];
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("groupnorm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.size() != c || beta.size() != c) throw ShapeError("groupnorm: affine size");
  const std::size_t spatial = x.size() / (n * c);
  const std::size_t per_group = c / groups;
  if (spatial == 0) throw ShapeError("groupnorm: empty spatial extent");
  NormPlan plan;
  plan.segments = n * groups;
  plan.length = per_group * spatial;
  // segment s = (sample, group); contiguous in memory
  plan.index = [len = plan.length](std::size_t s, std::size_t e) { return s * len + e; };
  plan.param = [groups, per_group, spatial](std::size_t s, std::size_t e) {
    return (s % groups) * per_group + e / spatial;
  };
  return normalize(x, gamma, beta, eps, std::move(plan));
}

}  // namespace icessm::nd
