#pragma once

// Selective state-space scan and the Mamba-style block that runs it along
// scan routes of a flattened (T,H,W) volume.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "icessm/nd/ops.hpp"
#include "icessm/nd/params.hpp"
#include "icessm/sfc.hpp"

namespace icessm::ssm {

using nd::Tensor;
using nd::Var;

/// SSM weights for an inner width D and state size N, bound on a tape.
struct SsmVars {
  Var a_log;   // [D,N]; A = -exp(a_log)
  Var d_skip;  // [D]
  Var w_dt;    // [D,1]
  Var b_dt;    // [D]
  Var w_b;     // [D,N]
  Var w_c;     // [D,N]
};

/// Raw recurrence on precomputed inputs. u, delta: [L,D]; a: [D,N] (negative);
/// b, c: [L,N]; d_skip: [D].
///   h_t = exp(delta_t * a) * h_{t-1} + delta_t * b_t * u_t,  h_0 = 0
///   y_t = <c_t, h_t> + d_skip * u_t
/// Throws NumericalError naming the first step whose state is not finite.
Var scan_core(Var u, Var delta, Var a, Var b, Var c, Var d_skip);

/// Input-dependent projections followed by scan_core. x: [L,D].
/// delta = softplus(x * w_dt + b_dt), b = x * w_b, c = x * w_c.
/// The backward direction scans the reversed sequence and reverses the result.
Var selective_scan(Var x, const SsmVars& p, sfc::Direction direction = sfc::Direction::forward);

/// v[N,C] in raster order -> the same rows in `order`'s sequence, and back.
Var to_route(Var v, const sfc::ScanOrder& order);
Var from_route(Var seq, const sfc::ScanOrder& order);

/// v: [T,C,H,W]. One output volume per route (flatten along the route,
/// selective_scan, unflatten).
std::vector<Var> hilbert_ssm(Var v, const std::vector<sfc::ScanOrder>& orders, const SsmVars& p);

struct MambaVars {
  Var ln_gamma, ln_beta;  // [D]
  Var w_in, b_in;         // [D,E], [E]
  Var conv_k, conv_b;     // [E,K], [E]
  Var w_gate, b_gate;     // [D,E], [E]
  Var w_out, b_out;       // [E,D], [D]
  SsmVars ssm;            // inner width E
};

/// x: [L,D] rows in raster voxel order of the orders' dims. Per route:
///   x' = LN(x); inner = SSM(SiLU(conv1d(Linear_in(x')))) along the route;
///   out = Linear_out(inner * SiLU(Linear_gate(x'))).
/// Returns one [L,D] output per route, back in raster order.
std::vector<Var> mamba_block(Var x, const std::vector<sfc::ScanOrder>& orders, const MambaVars& p);

struct MambaShape {
  std::size_t width = 32;
  std::size_t expand = 2;
  std::size_t state = 8;
  std::size_t conv_kernel = 3;
};

/// Adds freshly initialised block weights under `prefix`.
void init_mamba(nd::ParamSet& params, const std::string& prefix, const MambaShape& shape,
                std::mt19937_64& rng);
MambaVars bind_mamba(const nd::Binding& bound, const std::string& prefix);

}  // namespace icessm::ssm
