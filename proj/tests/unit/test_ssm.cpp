#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "icessm/error.hpp"
#include "icessm/nd/grad_check.hpp"
#include "icessm/ssm.hpp"

namespace icessm::ssm {
namespace {

using nd::Shape;
using nd::Tape;

Tensor random_tensor(Shape shape, std::mt19937& rng, float scale = 1.0f) {
  std::normal_distribution<float> nrm(0.0f, scale);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = nrm(rng);
  return t;
}

struct RawSsm {
  Tensor a_log, d_skip, w_dt, b_dt, w_b, w_c;
};

RawSsm random_ssm(std::size_t d, std::size_t n, std::mt19937& rng) {
  RawSsm p;
  p.a_log = random_tensor({d, n}, rng, 0.5f);
  p.d_skip = random_tensor({d}, rng);
  p.w_dt = random_tensor({d, 1}, rng, 0.5f);
  p.b_dt = random_tensor({d}, rng, 0.5f);
  p.w_b = random_tensor({d, n}, rng, 0.5f);
  p.w_c = random_tensor({d, n}, rng, 0.5f);
  return p;
}

SsmVars bind(Tape& tape, const RawSsm& p, bool grad = false) {
  return {tape.leaf(p.a_log, grad), tape.leaf(p.d_skip, grad), tape.leaf(p.w_dt, grad),
          tape.leaf(p.b_dt, grad),  tape.leaf(p.w_b, grad),    tape.leaf(p.w_c, grad)};
}

// Independent per-step recurrence in double precision.
std::vector<double> naive_scan(const Tensor& x, const RawSsm& p) {
  const std::size_t len = x.dim(0), d = x.dim(1), n = p.a_log.dim(1);
  std::vector<double> h(d * n, 0.0), y(len * d, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double proj = 0.0;
    for (std::size_t k = 0; k < d; ++k) proj += x.at({t, k}) * p.w_dt.at({k, 0});
    std::vector<double> bt(n, 0.0), ct(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        bt[j] += x.at({t, k}) * p.w_b.at({k, j});
        ct[j] += x.at({t, k}) * p.w_c.at({k, j});
      }
    for (std::size_t c = 0; c < d; ++c) {
      const double delta = std::log1p(std::exp(proj + p.b_dt[c]));
      const double u = x.at({t, c});
      double out = p.d_skip[c] * u;
      for (std::size_t j = 0; j < n; ++j) {
        const double a = -std::exp(static_cast<double>(p.a_log.at({c, j})));
        double& s = h[c * n + j];
        s = std::exp(delta * a) * s + delta * bt[j] * u;
        out += ct[j] * s;
      }
      y[t * d + c] = out;
    }
  }
  return y;
}

TEST(SelectiveScan, SingleStepClosedForm) {
  std::mt19937 rng(1);
  const RawSsm p = random_ssm(2, 3, rng);
  const Tensor x = random_tensor({1, 2}, rng);
  Tape tape(false);
  const Tensor y = selective_scan(tape.constant(x), bind(tape, p)).value();
  const auto ref = naive_scan(x, p);
  // With h_0 = 0 the output is <C, delta*B*x> + d_skip*x.
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[c], ref[c], 1e-6);
}

TEST(SelectiveScan, ZeroInputZeroOutput) {
  std::mt19937 rng(2);
  const RawSsm p = random_ssm(4, 8, rng);
  Tape tape(false);
  const Tensor y = selective_scan(tape.constant(Tensor({10, 4}, 0.0f)), bind(tape, p)).value();
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(SelectiveScan, MatchesNaiveRecurrence) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::size_t> len_dist(1, 64), d_dist(1, 8), n_dist(1, 8);
  float worst = 0.0f;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = len_dist(rng), d = d_dist(rng), n = n_dist(rng);
    const RawSsm p = random_ssm(d, n, rng);
    const Tensor x = random_tensor({len, d}, rng, 0.5f);
    Tape tape(false);
    const Tensor y = selective_scan(tape.constant(x), bind(tape, p)).value();
    const auto ref = naive_scan(x, p);
    for (std::size_t i = 0; i < y.size(); ++i)
      worst = std::max(worst, static_cast<float>(std::abs(y[i] - ref[i])));
  }
  EXPECT_LT(worst, 1e-5f);
}

TEST(SelectiveScan, ReversalIdentityIsExact) {
  std::mt19937 rng(4);
  const RawSsm p = random_ssm(3, 4, rng);
  const Tensor x = random_tensor({17, 3}, rng);
  Tensor xr({17, 3});
  for (std::size_t t = 0; t < 17; ++t)
    for (std::size_t c = 0; c < 3; ++c) xr.at({t, c}) = x.at({16 - t, c});
  Tape tape(false);
  const SsmVars v = bind(tape, p);
  const Tensor forward_on_reversed = selective_scan(tape.constant(xr), v).value();
  const Tensor backward = selective_scan(tape.constant(x), v, sfc::Direction::backward).value();
  for (std::size_t t = 0; t < 17; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(forward_on_reversed.at({t, c}), backward.at({16 - t, c}));
}

TEST(SelectiveScan, LongSequenceStaysBounded) {
  std::mt19937 rng(5);
  const RawSsm p = random_ssm(2, 8, rng);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  Tensor x({10000, 2});
  for (float& v : x.values()) v = unit(rng);
  Tape tape(false);
  const Tensor y = selective_scan(tape.constant(x), bind(tape, p)).value();
  EXPECT_TRUE(y.all_finite());
  float peak = 0.0f;
  for (float v : y.values()) peak = std::max(peak, std::abs(v));
  EXPECT_LT(peak, 1e3f);
}

TEST(SelectiveScan, NonFiniteStepIsNamed) {
  std::mt19937 rng(6);
  const RawSsm p = random_ssm(2, 2, rng);
  Tensor x = random_tensor({8, 2}, rng);
  x.at({5, 1}) = std::nanf("");
  Tape tape(false);
  try {
    selective_scan(tape.constant(x), bind(tape, p));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 5"), std::string::npos) << e.what();
  }
}

TEST(HilbertSsm, RasterRouteEqualsPlainScan) {
  std::mt19937 rng(7);
  const RawSsm p = random_ssm(3, 4, rng);
  const Tensor v = random_tensor({2, 3, 3, 4}, rng);
  Tape tape(false);
  const SsmVars vars = bind(tape, p);
  const auto out = hilbert_ssm(tape.constant(v), {sfc::raster({2, 3, 4})}, vars);
  ASSERT_EQ(out.size(), 1u);
  // Flatten to [N,C] by hand and scan.
  Tensor rows({24, 3});
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 12; ++i) rows.at({t * 12 + i, c}) = v[(t * 3 + c) * 12 + i];
  const Tensor ref = selective_scan(tape.constant(rows), vars).value();
  const Tensor got = out[0].value();
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 12; ++i)
        EXPECT_EQ(got[(t * 3 + c) * 12 + i], ref.at({t * 12 + i, c}));
}

TEST(HilbertSsm, PermutationEquivariance) {
  std::mt19937 rng(8);
  const RawSsm p = random_ssm(2, 3, rng);
  const Tensor v = random_tensor({3, 2, 4, 4}, rng);
  const sfc::ScanOrder order = sfc::gilbert3d({3, 4, 4});
  Tape tape(false);
  const SsmVars vars = bind(tape, p);
  const Tensor via_block = hilbert_ssm(tape.constant(v), {order}, vars)[0].value();
  const Tensor seq = sfc::apply(order, v);
  const Tensor direct =
      sfc::inverse_apply(order, selective_scan(tape.constant(seq), vars).value());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(via_block[i], direct[i], 1e-6);
}

TEST(HilbertSsm, TwoRoutesOnZeroAreZero) {
  std::mt19937 rng(9);
  const RawSsm p = random_ssm(2, 3, rng);
  const auto orders = sfc::routes(sfc::gilbert3d({2, 2, 2}), 2);
  Tape tape(false);
  const auto out = hilbert_ssm(tape.constant(Tensor({2, 2, 2, 2}, 0.0f)), orders, bind(tape, p));
  ASSERT_EQ(out.size(), 2u);
  for (const Var& o : out)
    for (float v : o.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(HilbertSsm, DimMismatchThrows) {
  std::mt19937 rng(10);
  const RawSsm p = random_ssm(2, 3, rng);
  Tape tape(false);
  EXPECT_THROW(hilbert_ssm(tape.constant(Tensor({2, 2, 2, 2})), {sfc::raster({2, 2, 3})},
                           bind(tape, p)),
               ShapeError);
  EXPECT_THROW(hilbert_ssm(tape.constant(Tensor({2, 2, 2, 2})), {}, bind(tape, p)), ShapeError);
}

TEST(SelectiveScan, GradientsMatchFiniteDifferences) {
  std::mt19937 rng(11);
  const RawSsm p = random_ssm(3, 4, rng);
  const Tensor x = random_tensor({9, 3}, rng, 0.7f);
  const Tensor proj = random_tensor({9, 3}, rng);
  for (auto dir : {sfc::Direction::forward, sfc::Direction::backward}) {
    const nd::GradCheckReport r = nd::grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          const SsmVars s{v[1], v[2], v[3], v[4], v[5], v[6]};
          return nd::sum(nd::mul(selective_scan(v[0], s, dir), tape.constant(proj)));
        },
        {x, p.a_log, p.d_skip, p.w_dt, p.b_dt, p.w_b, p.w_c}, {.step = 1e-2});
    EXPECT_LT(r.max_rel_error, 1e-3) << "input " << r.worst_input;
  }
}

nd::ParamSet block_params(std::size_t d, std::uint64_t seed) {
  nd::ParamSet params;
  std::mt19937_64 rng(seed);
  init_mamba(params, "m.", {.width = d, .expand = 2, .state = 4, .conv_kernel = 3}, rng);
  return params;
}

TEST(MambaBlock, ZeroInputZeroOutput) {
  const nd::ParamSet params = block_params(4, 1);
  Tape tape(false);
  nd::Binding b(tape, params, false);
  const auto orders = sfc::routes(sfc::gilbert3d({2, 2, 3}), 2);
  const auto out = mamba_block(tape.constant(Tensor({12, 4}, 0.0f)), orders, bind_mamba(b, "m."));
  ASSERT_EQ(out.size(), 2u);
  for (const Var& o : out)
    for (float v : o.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(MambaBlock, UnitGateReducesToLinearOut) {
  // silu(c) = 1 at c ~ 1.2785; bisect for it.
  double lo = 0.0, hi = 3.0;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid / (1.0 + std::exp(-mid)) < 1.0 ? lo : hi) = mid;
  }
  nd::ParamSet params = block_params(4, 2);
  params.at("m.gate.w").fill(0.0f);
  params.at("m.gate.b").fill(static_cast<float>(lo));
  std::mt19937 rng(12);
  const Tensor x = random_tensor({12, 4}, rng);
  const auto orders = sfc::routes(sfc::gilbert3d({3, 2, 2}), 2);
  Tape tape(false);
  nd::Binding b(tape, params, false);
  const MambaVars m = bind_mamba(b, "m.");
  const auto out = mamba_block(tape.constant(x), orders, m);
  Var normed = nd::layernorm(tape.constant(x), m.ln_gamma, m.ln_beta);
  Var expanded = nd::linear(normed, m.w_in, m.b_in);
  for (std::size_t r = 0; r < orders.size(); ++r) {
    Var seq = nd::silu(nd::causal_conv1d(to_route(expanded, orders[r]), m.conv_k, m.conv_b));
    const Tensor ref =
        nd::linear(from_route(selective_scan(seq, m.ssm), orders[r]), m.w_out, m.b_out).value();
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[r].value()[i], ref[i], 1e-5);
  }
}

TEST(MambaBlock, GradientsMatchFiniteDifferences) {
  const nd::ParamSet params = block_params(3, 3);
  std::mt19937 rng(13);
  const Tensor x = random_tensor({8, 3}, rng);
  const Tensor proj = random_tensor({8, 3}, rng);
  const auto orders = sfc::routes(sfc::gilbert3d({2, 2, 2}), 2);
  std::vector<Tensor> inputs{x};
  for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params[i]);
  const nd::GradCheckReport r = nd::grad_check(
      [&](Tape& tape, const std::vector<Var>& v) {
        MambaVars m;
        auto at = [&](const char* name) { return v[1 + params.index_of(std::string("m.") + name)]; };
        m.ln_gamma = at("ln.gamma");
        m.ln_beta = at("ln.beta");
        m.w_in = at("in.w");
        m.b_in = at("in.b");
        m.conv_k = at("conv.k");
        m.conv_b = at("conv.b");
        m.w_gate = at("gate.w");
        m.b_gate = at("gate.b");
        m.w_out = at("out.w");
        m.b_out = at("out.b");
        m.ssm = {at("ssm.a_log"), at("ssm.d_skip"), at("ssm.dt.w"),
                 at("ssm.dt.b"),  at("ssm.b.w"),    at("ssm.c.w")};
        const auto out = mamba_block(v[0], orders, m);
        return nd::add(nd::sum(nd::mul(out[0], tape.constant(proj))),
                       nd::sum(nd::mul(out[1], nd::scale(tape.constant(proj), -0.5f))));
      },
      inputs, {.step = 3e-3});
  EXPECT_LT(r.max_rel_error, 1e-3) << "input " << r.worst_input << " idx " << r.worst_index;
}

}  // namespace
}  // namespace icessm::ssm
