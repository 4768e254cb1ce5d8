#pragma once

// Fusion of two sequence-route features with the frequency feature: Hybrid
// Shuffle Attention plus the plain-sum and channel-gate baselines.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "icessm/nd/ops.hpp"
#include "icessm/nd/params.hpp"

namespace icessm::hsa {

using nd::Tensor;
using nd::Var;

/// [a_1..a_D, b_1..b_D, f_1..f_D] -> [a_1,b_1,f_1, a_2,b_2,f_2, ...].
/// Entry i of the result is input entry shuffle_index(D)[i].
std::vector<std::uint32_t> shuffle_index(std::size_t d);
std::vector<std::uint32_t> unshuffle_index(std::size_t d);
Var shuffle(Var v);    // v: [3D]
Var unshuffle(Var v);  // v: [3D]

struct HsaVars {
  Var weights;  // [D,3,3]: one 3x3 mixing matrix per shuffled triple
  Var bias;     // [3D], in shuffled order
};

struct HsaResult {
  Var y;          // [T,D,H,W]
  Var attention;  // [3D] = (A1, A2, Af) after sigmoid and unshuffle
};

/// x1, x2, xf: [T,D,H,W]. Pools each over (T,H,W), shuffles the pooled
/// triple, mixes per triple, squashes with sigmoid, unshuffles, and returns
/// y = A1*x1 + A2*x2 + Af*xf with per-channel weights.
HsaResult hsa_fuse_detailed(Var x1, Var x2, Var xf, const HsaVars& p);
Var hsa_fuse(Var x1, Var x2, Var xf, const HsaVars& p);

Var sum_fuse(Var x1, Var x2, Var xf);

struct CaGateVars {
  Var w[3];  // [D,D]
  Var b[3];  // [D]
};

/// Each input scaled by sigmoid(linear(pool(x_i))) per channel, then summed.
Var ca_gate_fuse(Var x1, Var x2, Var xf, const CaGateVars& p);

void init_hsa(nd::ParamSet& params, const std::string& prefix, std::size_t d, std::mt19937_64& rng);
HsaVars bind_hsa(const nd::Binding& bound, const std::string& prefix);
void init_ca_gate(nd::ParamSet& params, const std::string& prefix, std::size_t d,
                  std::mt19937_64& rng);
CaGateVars bind_ca_gate(const nd::Binding& bound, const std::string& prefix);

}  // namespace icessm::hsa
