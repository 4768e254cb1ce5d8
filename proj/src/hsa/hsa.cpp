#include "icessm/hsa.hpp"

#include <cmath>

#include "icessm/error.hpp"

namespace icessm::hsa {

namespace {

void check_inputs(const Var& x1, const Var& x2, const Var& xf, const char* op) {
  if (x1.value().rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [T,D,H,W], got " + nd::to_string(x1.shape()));
  }
  if (x2.shape() != x1.shape() || xf.shape() != x1.shape()) {
    throw ShapeError(std::string(op) + ": input shapes differ: " + nd::to_string(x1.shape()) +
                     ", " + nd::to_string(x2.shape()) + ", " + nd::to_string(xf.shape()));
  }
  if (x1.shape()[1] == 0) throw ShapeError(std::string(op) + ": zero channels");
}

Var pool(Var x) { return nd::reduce_mean(x, {0, 2, 3}); }

Var permute_vector(Var v, const std::vector<std::uint32_t>& index) {
  if (v.value().rank() != 1 || v.size() != index.size()) {
    throw ShapeError("shuffle: expected a [3D] vector, got " + nd::to_string(v.shape()));
  }
  const std::size_t n = v.size();
  return nd::reshape(nd::gather_permute(nd::reshape(v, {n, 1}), index), {n});
}

Tensor normal(nd::Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

std::vector<std::uint32_t> shuffle_index(std::size_t d) {
  std::vector<std::uint32_t> idx(3 * d);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < 3; ++j) idx[3 * k + j] = static_cast<std::uint32_t>(j * d + k);
  return idx;
}

std::vector<std::uint32_t> unshuffle_index(std::size_t d) {
  const auto fwd = shuffle_index(d);
  std::vector<std::uint32_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = static_cast<std::uint32_t>(i);
  return inv;
}

Var shuffle(Var v) {
  if (v.size() % 3) throw ShapeError("shuffle: length not divisible by 3");
  return permute_vector(v, shuffle_index(v.size() / 3));
}

Var unshuffle(Var v) {
  if (v.size() % 3) throw ShapeError("unshuffle: length not divisible by 3");
  return permute_vector(v, unshuffle_index(v.size() / 3));
}

HsaResult hsa_fuse_detailed(Var x1, Var x2, Var xf, const HsaVars& p) {
  check_inputs(x1, x2, xf, "hsa_fuse");
  const std::size_t d = x1.shape()[1];
  if (p.weights.shape() != nd::Shape{d, 3, 3}) {
    throw ShapeError("hsa_fuse: weights " + nd::to_string(p.weights.shape()) + " for D=" +
                     std::to_string(d));
  }
  Var pooled = nd::concat({pool(x1), pool(x2), pool(xf)}, 0);
  Var mixed = nd::group_conv1d(shuffle(pooled), p.weights, p.bias, 3);
  Var attention = unshuffle(nd::sigmoid(mixed));
  auto a = nd::chunk(attention, 3, 0);
  Var y = nd::add(nd::add(nd::mul_along(x1, a[0], 1), nd::mul_along(x2, a[1], 1)),
                  nd::mul_along(xf, a[2], 1));
  return {y, attention};
}

Var hsa_fuse(Var x1, Var x2, Var xf, const HsaVars& p) {
  return hsa_fuse_detailed(x1, x2, xf, p).y;
}

Var sum_fuse(Var x1, Var x2, Var xf) {
  if (x2.shape() != x1.shape() || xf.shape() != x1.shape()) {
    throw ShapeError("sum_fuse: input shapes differ");
  }
  return nd::add(nd::add(x1, x2), xf);
}

Var ca_gate_fuse(Var x1, Var x2, Var xf, const CaGateVars& p) {
  check_inputs(x1, x2, xf, "ca_gate_fuse");
  const Var xs[3] = {x1, x2, xf};
  Var out{};
  for (std::size_t i = 0; i < 3; ++i) {
    Var gate = nd::sigmoid(nd::linear(pool(xs[i]), p.w[i], p.b[i]));
    Var scaled = nd::mul_along(xs[i], gate, 1);
    out = i == 0 ? scaled : nd::add(out, scaled);
  }
  return out;
}

void init_hsa(nd::ParamSet& params, const std::string& prefix, std::size_t d, std::mt19937_64& rng) {
  params.add(prefix + "hsa.w", normal({d, 3, 3}, 1.0f / std::sqrt(3.0f), rng));
  params.add(prefix + "hsa.b", Tensor({3 * d}, 0.0f));
}

HsaVars bind_hsa(const nd::Binding& bound, const std::string& prefix) {
  return {bound[prefix + "hsa.w"], bound[prefix + "hsa.b"]};
}

void init_ca_gate(nd::ParamSet& params, const std::string& prefix, std::size_t d,
                  std::mt19937_64& rng) {
  for (int i = 0; i < 3; ++i) {
    const std::string tag = prefix + "cag" + std::to_string(i);
    params.add(tag + ".w", normal({d, d}, 1.0f / std::sqrt(static_cast<float>(d)), rng));
    params.add(tag + ".b", Tensor({d}, 0.0f));
  }
}

CaGateVars bind_ca_gate(const nd::Binding& bound, const std::string& prefix) {
  CaGateVars v;
  for (int i = 0; i < 3; ++i) {
    const std::string tag = prefix + "cag" + std::to_string(i);
    v.w[i] = bound[tag + ".w"];
    v.b[i] = bound[tag + ".b"];
  }
  return v;
}

}  // namespace icessm::hsa
