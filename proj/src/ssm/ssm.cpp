#include "icessm/ssm.hpp"

#include <cmath>
#include <memory>
#include <numeric>

#include "icessm/error.hpp"

namespace icessm::ssm {

using nd::Shape;
using nd::Tape;

namespace {

void expect_shape(const Var& v, const Shape& shape, const char* what) {
  if (v.shape() != shape) {
    throw ShapeError(std::string("scan: ") + what + " is " + nd::to_string(v.shape()) +
                     ", expected " + nd::to_string(shape));
  }
}

std::vector<std::uint32_t> reversed_rows(std::size_t n) {
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(n - 1 - i);
  return idx;
}

}  // namespace

Var scan_core(Var u, Var delta, Var a, Var b, Var c, Var d_skip) {
  if (u.value().rank() != 2) throw ShapeError("scan: u must be [L,D], got " + nd::to_string(u.shape()));
  const std::size_t len = u.shape()[0], dim = u.shape()[1];
  if (len == 0) throw ShapeError("scan: empty sequence");
  if (a.value().rank() != 2 || a.shape()[0] != dim) {
    throw ShapeError("scan: a must be [D,N], got " + nd::to_string(a.shape()));
  }
  const std::size_t ns = a.shape()[1];
  expect_shape(delta, {len, dim}, "delta");
  expect_shape(b, {len, ns}, "b");
  expect_shape(c, {len, ns}, "c");
  expect_shape(d_skip, {dim}, "d_skip");

  const float* uv = u.value().data();
  const float* dv = delta.value().data();
  const float* av = a.value().data();
  const float* bv = b.value().data();
  const float* cv = c.value().data();
  const float* sv = d_skip.value().data();

  // States for every step, kept for the backward pass.
  auto states = std::make_shared<std::vector<float>>(len * dim * ns);
  std::vector<float> h(dim * ns, 0.0f);
  Tensor y({len, dim});
  for (std::size_t t = 0; t < len; ++t) {
    bool finite = true;
    for (std::size_t d = 0; d < dim; ++d) {
      const float dt = dv[t * dim + d];
      const float ut = uv[t * dim + d];
      float acc = 0.0f;
      for (std::size_t n = 0; n < ns; ++n) {
        float& hn = h[d * ns + n];
        hn = std::exp(dt * av[d * ns + n]) * hn + dt * bv[t * ns + n] * ut;
        acc += cv[t * ns + n] * hn;
      }
      const float out = acc + sv[d] * ut;
      finite = finite && std::isfinite(out);
      y[t * dim + d] = out;
    }
    if (!finite) {
      throw NumericalError("selective scan: non-finite state at step " + std::to_string(t) +
                           " of " + std::to_string(len));
    }
    std::copy(h.begin(), h.end(), states->begin() + t * dim * ns);
  }

  return u.tape->record(
      std::move(y), {u, delta, a, b, c, d_skip},
      [=](Tape& tape, const Tensor& gy) {
        const float* uv = tape.value(u).data();
        const float* dv = tape.value(delta).data();
        const float* av = tape.value(a).data();
        const float* bv = tape.value(b).data();
        const float* cv = tape.value(c).data();
        const float* sv = tape.value(d_skip).data();
        const float* hs = states->data();

        Tensor gu({len, dim}), gdelta({len, dim}), ga({dim, ns}), gb({len, ns}), gc({len, ns}),
            gs({dim});
        // gh carries d(loss)/d(h_t) backwards through the recurrence.
        std::vector<float> gh(dim * ns, 0.0f);
        for (std::size_t t = len; t-- > 0;) {
          for (std::size_t d = 0; d < dim; ++d) {
            const float g = gy[t * dim + d];
            const float dt = dv[t * dim + d];
            const float ut = uv[t * dim + d];
            gu[t * dim + d] += sv[d] * g;
            gs[d] += g * ut;
            float gdt = 0.0f, gut = 0.0f;
            for (std::size_t n = 0; n < ns; ++n) {
              const std::size_t k = d * ns + n;
              const float ht = hs[t * dim * ns + k];
              const float hprev = t > 0 ? hs[(t - 1) * dim * ns + k] : 0.0f;
              const float decay = std::exp(dt * av[k]);
              float& g_h = gh[k];
              g_h += cv[t * ns + n] * g;
              gc[t * ns + n] += g * ht;
              const float g_decay = g_h * hprev * decay;
              gdt += g_decay * av[k] + g_h * bv[t * ns + n] * ut;
              ga[k] += g_decay * dt;
              gb[t * ns + n] += g_h * dt * ut;
              gut += g_h * dt * bv[t * ns + n];
              g_h *= decay;  // becomes the contribution flowing to h_{t-1}
            }
            gdelta[t * dim + d] += gdt;
            gu[t * dim + d] += gut;
          }
        }
        tape.accumulate(u, gu);
        tape.accumulate(delta, gdelta);
        tape.accumulate(a, ga);
        tape.accumulate(b, gb);
        tape.accumulate(c, gc);
        tape.accumulate(d_skip, gs);
      });
}

Var selective_scan(Var x, const SsmVars& p, sfc::Direction direction) {
  if (x.value().rank() != 2) throw ShapeError("selective_scan: x must be [L,D]");
  const std::size_t len = x.shape()[0];
  if (direction == sfc::Direction::backward) {
    const auto rev = reversed_rows(len);
    return nd::gather_permute(selective_scan(nd::gather_permute(x, rev), p), rev);
  }
  Var a = nd::scale(nd::exp(p.a_log), -1.0f);
  // x * w_dt is one value per step; a ones row spreads it across channels
  // before the per-channel bias.
  const std::size_t width = x.shape()[1];
  Var spread = x.tape->constant(Tensor({1, width}, 1.0f));
  Var delta = nd::softplus(nd::linear(nd::linear(x, p.w_dt), spread, p.b_dt));
  Var b = nd::linear(x, p.w_b);
  Var c = nd::linear(x, p.w_c);
  return scan_core(x, delta, a, b, c, p.d_skip);
}

Var to_route(Var v, const sfc::ScanOrder& order) {
  if (v.value().rank() != 2 || v.shape()[0] != order.size()) {
    throw ShapeError("to_route: sequence " + nd::to_string(v.shape()) + " vs order of " +
                     std::to_string(order.size()));
  }
  return nd::gather_permute(v, order.sequence());
}

Var from_route(Var seq, const sfc::ScanOrder& order) {
  if (seq.value().rank() != 2 || seq.shape()[0] != order.size()) {
    throw ShapeError("from_route: sequence " + nd::to_string(seq.shape()) + " vs order of " +
                     std::to_string(order.size()));
  }
  std::vector<std::uint32_t> inverse(order.size());
  for (std::size_t li = 0; li < order.size(); ++li) inverse[li] = order.position(li);
  return nd::gather_permute(seq, inverse);
}

std::vector<Var> hilbert_ssm(Var v, const std::vector<sfc::ScanOrder>& orders, const SsmVars& p) {
  if (orders.empty()) throw ShapeError("hilbert_ssm: no routes");
  if (v.value().rank() != 4) throw ShapeError("hilbert_ssm: expected [T,C,H,W]");
  const Shape& s = v.shape();
  const sfc::Dims dims{s[0], s[2], s[3]};
  for (const auto& o : orders) {
    if (!(o.dims() == dims)) {
      throw ShapeError("hilbert_ssm: order dims " + sfc::to_string(o.dims()) + " vs volume " +
                       nd::to_string(s));
    }
  }
  Var rows = nd::reshape(nd::permute(v, {0, 2, 3, 1}), {dims.count(), s[1]});
  std::vector<Var> out;
  for (const auto& o : orders) {
    Var y = from_route(selective_scan(to_route(rows, o), p), o);
    out.push_back(nd::permute(nd::reshape(y, {s[0], s[2], s[3], s[1]}), {0, 3, 1, 2}));
  }
  return out;
}

std::vector<Var> mamba_block(Var x, const std::vector<sfc::ScanOrder>& orders, const MambaVars& p) {
  if (orders.empty()) throw ShapeError("mamba_block: no routes");
  if (x.value().rank() != 2) throw ShapeError("mamba_block: x must be [L,D]");
  for (const auto& o : orders) {
    if (o.size() != x.shape()[0]) {
      throw ShapeError("mamba_block: order of " + std::to_string(o.size()) + " for " +
                       std::to_string(x.shape()[0]) + " rows");
    }
  }
  Var normed = nd::layernorm(x, p.ln_gamma, p.ln_beta);
  Var expanded = nd::linear(normed, p.w_in, p.b_in);
  Var gate = nd::silu(nd::linear(normed, p.w_gate, p.b_gate));
  std::vector<Var> out;
  for (const auto& o : orders) {
    Var seq = nd::silu(nd::causal_conv1d(to_route(expanded, o), p.conv_k, p.conv_b));
    Var inner = from_route(selective_scan(seq, p.ssm), o);
    out.push_back(nd::linear(nd::mul(inner, gate), p.w_out, p.b_out));
  }
  return out;
}

void init_mamba(nd::ParamSet& params, const std::string& prefix, const MambaShape& shape,
                std::mt19937_64& rng) {
  const std::size_t d = shape.width, e = shape.width * shape.expand, n = shape.state;
  auto normal = [&rng](Shape s, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Tensor t(std::move(s));
    for (float& v : t.values()) v = dist(rng);
    return t;
  };
  params.add(prefix + "ln.gamma", Tensor({d}, 1.0f));
  params.add(prefix + "ln.beta", Tensor({d}, 0.0f));
  params.add(prefix + "in.w", normal({d, e}, 1.0f / std::sqrt(static_cast<float>(d))));
  params.add(prefix + "in.b", Tensor({e}, 0.0f));
  params.add(prefix + "conv.k",
             normal({e, shape.conv_kernel}, 1.0f / std::sqrt(static_cast<float>(shape.conv_kernel))));
  params.add(prefix + "conv.b", Tensor({e}, 0.0f));
  params.add(prefix + "gate.w", normal({d, e}, 1.0f / std::sqrt(static_cast<float>(d))));
  params.add(prefix + "gate.b", Tensor({e}, 0.0f));
  params.add(prefix + "out.w", normal({e, d}, 1.0f / std::sqrt(static_cast<float>(e))));
  params.add(prefix + "out.b", Tensor({d}, 0.0f));

  Tensor a_log({e, n});
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = std::log(static_cast<float>(j + 1));
  params.add(prefix + "ssm.a_log", std::move(a_log));
  params.add(prefix + "ssm.d_skip", Tensor({e}, 1.0f));
  params.add(prefix + "ssm.dt.w", normal({e, 1}, 0.1f / std::sqrt(static_cast<float>(e))));
  // softplus(bias) = 0.1
  params.add(prefix + "ssm.dt.b", Tensor({e}, std::log(std::expm1(0.1f))));
  params.add(prefix + "ssm.b.w", normal({e, n}, 1.0f / std::sqrt(static_cast<float>(e))));
  params.add(prefix + "ssm.c.w", normal({e, n}, 1.0f / std::sqrt(static_cast<float>(e))));
}

MambaVars bind_mamba(const nd::Binding& bound, const std::string& prefix) {
  MambaVars m;
  m.ln_gamma = bound[prefix + "ln.gamma"];
  m.ln_beta = bound[prefix + "ln.beta"];
  m.w_in = bound[prefix + "in.w"];
  m.b_in = bound[prefix + "in.b"];
  m.conv_k = bound[prefix + "conv.k"];
  m.conv_b = bound[prefix + "conv.b"];
  m.w_gate = bound[prefix + "gate.w"];
  m.b_gate = bound[prefix + "gate.b"];
  m.w_out = bound[prefix + "out.w"];
  m.b_out = bound[prefix + "out.b"];
  m.ssm.a_log = bound[prefix + "ssm.a_log"];
  m.ssm.d_skip = bound[prefix + "ssm.d_skip"];
  m.ssm.w_dt = bound[prefix + "ssm.dt.w"];
  m.ssm.b_dt = bound[prefix + "ssm.dt.b"];
  m.ssm.w_b = bound[prefix + "ssm.b.w"];
  m.ssm.w_c = bound[prefix + "ssm.c.w"];
  return m;
}

}  // namespace icessm::ssm
