#include <algorithm>
#include <cmath>
#include <numeric>

#include "icessm/error.hpp"
#include "icessm/nd/ops.hpp"

namespace icessm::nd {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <class Fn, class DFn>
Var unary(Var x, Fn fn, DFn dfn) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return x.tape->record(std::move(out), {x}, [x, dfn](Tape& tape, const Tensor& g) {
    const Tensor& in = tape.value(x);
    Tensor& gx = tape.grad_slot(x);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += g[i] * dfn(in[i]);
  });
}

float sigmoid_value(float v) {
  if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
  const float e = std::exp(v);
  return e / (1.0f + e);
}

float softplus_value(float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); }

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// inner = product of dims after axis.
std::size_t inner_size(const Shape& shape, std::size_t axis) {
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return inner;
}

Var broadcast_along(Var x, Var a, std::size_t axis, bool multiply) {
  const Shape& shape = x.shape();
  if (axis >= shape.size() || a.value().rank() != 1 || a.size() != shape[axis]) {
    throw ShapeError("broadcast_along: operand " + to_string(a.shape()) +
                     " does not match axis " + std::to_string(axis) + " of " + to_string(shape));
  }
  const std::size_t inner = inner_size(shape, axis);
  const std::size_t dim = shape[axis];
  const Tensor& xv = x.value();
  const Tensor& av = a.value();
  Tensor out(shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const float s = av[(i / inner) % dim];
    out[i] = multiply ? xv[i] * s : xv[i] + s;
  }
  return x.tape->record(std::move(out), {x, a},
                        [x, a, inner, dim, multiply](Tape& tape, const Tensor& g) {
                          const Tensor& xv = tape.value(x);
                          const Tensor& av = tape.value(a);
                          const bool gx_on = tape.requires_grad(x);
                          const bool ga_on = tape.requires_grad(a);
                          Tensor* gx = gx_on ? &tape.grad_slot(x) : nullptr;
                          Tensor* ga = ga_on ? &tape.grad_slot(a) : nullptr;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const std::size_t k = (i / inner) % dim;
                            if (multiply) {
                              if (gx) (*gx)[i] += g[i] * av[k];
                              if (ga) (*ga)[k] += g[i] * xv[i];
                            } else {
                              if (gx) (*gx)[i] += g[i];
                              if (ga) (*ga)[k] += g[i];
                            }
                          }
                        });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) {
      Tensor& gb = tape.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (tape.requires_grad(a)) {
      Tensor& ga = tape.grad_slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(b)) {
      Tensor& gb = tape.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var x, float factor) {
  return unary(x, [factor](float v) { return v * factor; }, [factor](float) { return factor; });
}

Var add_scalar(Var x, float value) {
  return unary(x, [value](float v) { return v + value; }, [](float) { return 1.0f; });
}

Var abs(Var x) {
  return unary(
      x, [](float v) { return std::fabs(v); },
      [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Var square(Var x) {
  return unary(x, [](float v) { return v * v; }, [](float v) { return 2.0f * v; });
}

Var exp(Var x) {
  return unary(x, [](float v) { return std::exp(v); }, [](float v) { return std::exp(v); });
}

Var log(Var x) {
  return unary(x, [](float v) { return std::log(v); }, [](float v) { return 1.0f / v; });
}

Var sigmoid(Var x) {
  return unary(x, sigmoid_value, [](float v) {
    const float s = sigmoid_value(v);
    return s * (1.0f - s);
  });
}

Var silu(Var x) {
  return unary(
      x, [](float v) { return v * sigmoid_value(v); },
      [](float v) {
        const float s = sigmoid_value(v);
        return s + v * s * (1.0f - s);
      });
}

Var softplus(Var x) { return unary(x, softplus_value, sigmoid_value); }

Var leaky_relu(Var x, float slope) {
  return unary(
      x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v) { return v > 0.0f ? 1.0f : slope; });
}

Var sum(Var x) {
  const Tensor& in = x.value();
  double total = 0.0;
  for (float v : in.values()) total += v;
  return x.tape->record(Tensor::scalar(static_cast<float>(total)), {x},
                        [x](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                        });
}

Var mean(Var x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(n));
}

Var reduce_mean(Var x, std::vector<std::size_t> axes) {
  const Shape& shape = x.shape();
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(shape.size(), false);
  for (std::size_t a : axes) {
    if (a >= shape.size()) throw ShapeError("reduce_mean: axis out of range");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) {
      count *= shape[i];
    } else {
      out_shape.push_back(shape[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  if (count == 0) throw ShapeError("reduce_mean: empty reduction");

  // Output flat index for every input element.
  std::vector<std::size_t> target(x.size());
  {
    const auto in_strides = strides_of(shape);
    std::vector<std::size_t> out_strides_full(shape.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
      if (!reduced[i]) {
        out_strides_full[i] = stride;
        stride *= shape[i];
      }
    }
    for (std::size_t flat = 0; flat < target.size(); ++flat) {
      std::size_t rem = flat;
      std::size_t t = 0;
      for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t coord = rem / in_strides[i];
        rem %= in_strides[i];
        t += coord * out_strides_full[i];
      }
      target[flat] = t;
    }
  }
  const float inv = 1.0f / static_cast<float>(count);
  std::vector<double> acc(numel(out_shape), 0.0);
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) acc[target[i]] += in[i];
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(acc[i]) * inv;
  return x.tape->record(std::move(out), {x},
                        [x, target = std::move(target), inv](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[target[i]] * inv;
                        });
}

Var global_avg_pool(Var x) {
  const std::size_t r = x.value().rank();
  if (r < 2) throw ShapeError("global_avg_pool: need at least 2 axes");
  return reduce_mean(x, {r - 2, r - 1});
}

Var mul_along(Var x, Var a, std::size_t axis) { return broadcast_along(x, a, axis, true); }
Var add_along(Var x, Var a, std::size_t axis) { return broadcast_along(x, a, axis, false); }

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return x.tape->record(x.value().reshape(std::move(shape)), {x},
                        [x](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

Var permute(Var x, std::vector<std::size_t> axes) {
  const Shape& shape = x.shape();
  if (axes.size() != shape.size()) throw ShapeError("permute: axis count mismatch");
  {
    std::vector<bool> seen(axes.size(), false);
    for (std::size_t a : axes) {
      if (a >= axes.size() || seen[a]) throw ShapeError("permute: axes are not a permutation");
      seen[a] = true;
    }
  }
  Shape out_shape(shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = shape[axes[i]];
  const auto in_strides = strides_of(shape);
  const auto out_strides = strides_of(out_shape);
  // source[flat_out] = flat_in
  std::vector<std::size_t> source(x.size());
  for (std::size_t flat = 0; flat < source.size(); ++flat) {
    std::size_t rem = flat;
    std::size_t src = 0;
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      const std::size_t coord = rem / out_strides[i];
      rem %= out_strides[i];
      src += coord * in_strides[axes[i]];
    }
    source[flat] = src;
  }
  const Tensor& in = x.value();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[source[i]];
  return x.tape->record(std::move(out), {x},
                        [x, source = std::move(source)](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
                        });
}

Var gather_rows(Var x, std::span<const std::uint32_t> index) {
  const Shape& shape = x.shape();
  if (shape.empty()) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = shape[0];
  const std::size_t row = rows ? x.size() / rows : 0;
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  for (std::uint32_t i : idx) {
    if (i >= rows) throw ShapeError("gather_rows: index out of range");
  }
  Shape out_shape = shape;
  out_shape[0] = idx.size();
  const Tensor& in = x.value();
  Tensor out(out_shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(in.data() + idx[r] * row, row, out.data() + r * row);
  }
  return x.tape->record(std::move(out), {x},
                        [x, idx = std::move(idx), row](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t r = 0; r < idx.size(); ++r) {
                            float* dst = gx.data() + idx[r] * row;
                            const float* src = g.data() + r * row;
                            for (std::size_t k = 0; k < row; ++k) dst[k] += src[k];
                          }
                        });
}

Var gather_permute(Var x, std::span<const std::uint32_t> perm) {
  const std::size_t rows = x.value().rank() ? x.shape()[0] : 0;
  std::vector<bool> seen(rows, false);
  if (perm.size() != rows) throw ShapeError("gather_permute: permutation length mismatch");
  for (std::uint32_t p : perm) {
    if (p >= rows || seen[p]) throw ShapeError("gather_permute: not a bijection");
    seen[p] = true;
  }
  return gather_rows(x, perm);
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw ShapeError("concat: shape mismatch");
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t inner = inner_size(first, axis);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.shape()[axis] * inner;
    const Tensor& v = p.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * block, block, out.data() + o * out_block + offset);
    }
    offset += block;
  }
  return parts.front().tape->record(
      std::move(out), parts,
      [parts, offsets, outer, inner, axis, out_block](Tape& tape, const Tensor& g) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (!tape.requires_grad(parts[k])) continue;
          Tensor& gp = tape.grad_slot(parts[k]);
          const std::size_t block = gp.shape()[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o) {
            const float* src = g.data() + o * out_block + offsets[k];
            float* dst = gp.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
      });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t length) {
  const Shape& shape = x.shape();
  if (axis >= shape.size() || begin + length > shape[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", +" + std::to_string(length) +
                     ") out of range for " + to_string(shape));
  }
  const std::size_t inner = inner_size(shape, axis);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  Shape out_shape = shape;
  out_shape[axis] = length;
  const std::size_t in_block = shape[axis] * inner;
  const std::size_t out_block = length * inner;
  const std::size_t off = begin * inner;
  const Tensor& in = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(in.data() + o * in_block + off, out_block, out.data() + o * out_block);
  }
  return x.tape->record(std::move(out), {x},
                        [x, outer, in_block, out_block, off](Tape& tape, const Tensor& g) {
                          Tensor& gx = tape.grad_slot(x);
                          for (std::size_t o = 0; o < outer; ++o) {
                            float* dst = gx.data() + o * in_block + off;
                            const float* src = g.data() + o * out_block;
                            for (std::size_t i = 0; i < out_block; ++i) dst[i] += src[i];
                          }
                        });
}

std::vector<Var> chunk(Var x, std::size_t count, std::size_t axis) {
  const Shape& shape = x.shape();
  if (count == 0 || axis >= shape.size() || shape[axis] % count != 0) {
    throw ShapeError("chunk: " + std::to_string(count) + " chunks do not divide axis " +
                     std::to_string(axis) + " of " + to_string(shape));
  }
  const std::size_t len = shape[axis] / count;
  std::vector<Var> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(slice(x, axis, k * len, len));
  return out;
}

Var forward_diff(Var x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) throw ShapeError("forward_diff: axis out of range");
  const std::size_t inner = inner_size(shape, axis);
  const std::size_t n = shape[axis];
  const Tensor& in = x.value();
  Tensor out(shape, 0.0f);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t k = (i / inner) % n;
    if (k + 1 < n) out[i] = in[i + inner] - in[i];
  }
  return x.tape->record(std::move(out), {x}, [x, inner, n](Tape& tape, const Tensor& g) {
    Tensor& gx = tape.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t k = (i / inner) % n;
      if (k + 1 < n) {
        gx[i + inner] += g[i];
        gx[i] -= g[i];
      }
    }
  });
}

}  // namespace icessm::nd
