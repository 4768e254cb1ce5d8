#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "icessm/error.hpp"
#include "icessm/model.hpp"
#include "icessm/nd/grad_check.hpp"

namespace icessm::model {
namespace {

using nd::Shape;
using nd::Tape;

Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.in_len = 4;
  c.out_len = 3;
  c.width = 8;
  c.n_fssm = 1;
  c.state = 2;
  c.expand = 1;
  return c;
}

TEST(Config, JsonRoundTrip) {
  ModelConfig c = toy_config();
  c.head = Head::gaussian;
  c.fusion = Fusion::ca_gate;
  c.scan = sfc::Kind::peano;
  c.n_routes = 4;
  c.lambda = 0.25f;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_from_json("{}"), ModelConfig{});
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(config_from_json("{\"head\": \"laplace\"}"), FormatError);
  EXPECT_THROW(config_from_json("{\"wavelet\": \"db4\"}"), FormatError);
  EXPECT_THROW(config_from_json("not json"), FormatError);
  ModelConfig c;
  c.n_routes = 3;
  EXPECT_THROW(c.validate(), ShapeError);
  c = {};
  c.width = 7;
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(Params, InitIsSeededAndChecked) {
  const ModelConfig c = toy_config();
  EXPECT_EQ(init_params(c, 3), init_params(c, 3));
  EXPECT_FALSE(init_params(c, 3) == init_params(c, 4));
  EXPECT_NO_THROW(check_params(init_params(c, 3), c));
  ModelConfig wider = c;
  wider.width = 16;
  EXPECT_THROW(check_params(init_params(c, 3), wider), ShapeError);
}

TEST(Forward, ShapeContract) {
  std::mt19937 rng(1);
  ModelConfig c = toy_config();
  const ParamSet p = init_params(c, 1);
  for (std::size_t h : {8u, 12u, 16u, 32u, 64u}) {
    for (std::size_t w : {8u, 20u}) {
      const Forecast f = predict(p, c, random_tensor({c.in_len, 1, h, w}, rng));
      EXPECT_EQ(f.mean.shape(), (Shape{c.out_len, 1, h, w}));
      EXPECT_FALSE(f.sigma.has_value());
      for (float v : f.mean.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
  EXPECT_THROW(predict(p, c, Tensor({c.in_len, 1, 10, 8})), ShapeError);
  EXPECT_THROW(predict(p, c, Tensor({c.in_len + 1, 1, 8, 8})), ShapeError);
}

TEST(Forward, AllRouteAndFusionVariantsRun) {
  std::mt19937 rng(2);
  const Tensor x = random_tensor({4, 1, 8, 8}, rng);
  for (int routes : {1, 2, 4}) {
    for (Fusion fusion : {Fusion::hsa, Fusion::sum, Fusion::ca_gate}) {
      for (sfc::Kind kind : {sfc::Kind::raster, sfc::Kind::zorder, sfc::Kind::peano,
                             sfc::Kind::hilbert_spatial_first, sfc::Kind::hilbert_temporal_first}) {
        ModelConfig c = toy_config();
        c.n_routes = routes;
        c.fusion = fusion;
        c.scan = kind;
        const Forecast f = predict(init_params(c, 5), c, x);
        EXPECT_EQ(f.mean.shape(), (Shape{3, 1, 8, 8}));
        EXPECT_TRUE(f.mean.all_finite());
      }
    }
  }
}

TEST(Forward, GaussianSigmaPositive) {
  std::mt19937 rng(3);
  ModelConfig c = toy_config();
  c.head = Head::gaussian;
  const Forecast f = predict(init_params(c, 2), c, random_tensor({4, 1, 8, 8}, rng));
  ASSERT_TRUE(f.sigma.has_value());
  EXPECT_EQ(f.sigma->shape(), f.mean.shape());
  for (float s : f.sigma->values()) EXPECT_GT(s, 0.0f);
}

TEST(Forward, FullModelGradients) {
  std::mt19937 rng(4);
  const ModelConfig c = toy_config();
  const ParamSet params = init_params(c, 9);
  const Tensor x = random_tensor({4, 1, 8, 8}, rng);
  const Tensor y = random_tensor({3, 1, 8, 8}, rng);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params[i]);
  const nd::GradCheckReport r = nd::grad_check(
      [&](Tape& tape, const std::vector<Var>& v) {
        const nd::Binding bound(tape, params, v);
        const Output out = forward(bound, c, tape.constant(x));
        // Squared error keeps the objective smooth around the probes.
        Var d = nd::sub(out.mean, tape.constant(y));
        return nd::mean(nd::mul(d, d));
      },
      inputs, {.step = 1e-4, .max_probes = 4, .seed = 3});
  EXPECT_LT(r.max_rel_error, 1e-2) << params.name(r.worst_input) << " idx " << r.worst_index;
}

TEST(Forward, FssmBlockGradients) {
  std::mt19937 rng(14);
  for (Fusion fusion : {Fusion::hsa, Fusion::ca_gate}) {
    ModelConfig c = toy_config();
    c.fusion = fusion;
    const ParamSet all = init_params(c, 2);
    ParamSet params;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all.name(i).rfind("fssm0.", 0) == 0) params.add(all.name(i), all[i]);
    const Tensor z = random_tensor({4, 8, 2, 2}, rng, -1.0f, 1.0f);
    const Tensor proj = random_tensor({4, 8, 2, 2}, rng, -1.0f, 1.0f);
    const auto orders = latent_routes(c, 8, 8);
    std::vector<Tensor> inputs{z};
    for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params[i]);
    const nd::GradCheckReport r = nd::grad_check(
        [&](Tape& tape, const std::vector<Var>& v) {
          const nd::Binding bound(tape, params, std::vector<Var>(v.begin() + 1, v.end()));
          return nd::sum(nd::mul(fssm_block(bound, c, 0, v[0], orders), tape.constant(proj)));
        },
        inputs, {.step = 1e-3, .max_probes = 6, .seed = 3, .kink_tolerance = 0.01});
    EXPECT_LT(r.max_rel_error, 1e-2) << "input " << r.worst_input << " idx " << r.worst_index;
    EXPECT_LE(r.skipped * 5, r.probes + r.skipped) << r.skipped << " kinks";
  }
}

TEST(Losses, LambdaIdentities) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape(false);
    Var p = tape.constant(random_tensor({2, 1, 6, 5}, rng));
    Var y = tape.constant(random_tensor({2, 1, 6, 5}, rng));
    EXPECT_EQ(loss_total(p, y, 0.0f).value()[0], loss_rec(p, y).value()[0]);
    const float lambda = 0.05f + 0.5f * static_cast<float>(trial) / 20.0f;
    const float gap = loss_total(p, y, 2 * lambda).value()[0] - loss_total(p, y, lambda).value()[0];
    EXPECT_NEAR(gap, lambda * loss_grad(p, y).value()[0], 1e-6);
  }
  Tape tape(false);
  Var z = tape.constant(Tensor({1, 1, 2, 2}));
  EXPECT_THROW(loss_total(z, z, -1.0f), ShapeError);
}

TEST(Losses, GradientLossIgnoresOffsets) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape(false);
    const Tensor a = random_tensor({3, 1, 5, 7}, rng);
    Tensor b = a;
    for (float& v : b.values()) v += 0.3f;
    Var y = tape.constant(random_tensor({3, 1, 5, 7}, rng));
    EXPECT_NEAR(loss_grad(tape.constant(a), y).value()[0], loss_grad(tape.constant(b), y).value()[0], 1e-6);
    EXPECT_NEAR(loss_grad(tape.constant(a), tape.constant(b)).value()[0], 0.0f, 1e-6);
  }
}

TEST(Losses, GradientLossHandCase) {
  // pred rows [0,1] / [0,1], target zero: W differences 1,0 per row, H differences all 0.
  Tape tape(false);
  Var p = tape.constant(Tensor({1, 1, 2, 2}, std::vector<float>{0, 1, 0, 1}));
  Var y = tape.constant(Tensor({1, 1, 2, 2}));
  EXPECT_FLOAT_EQ(loss_grad(p, y).value()[0], 0.5f * (0.0f + 0.5f));
}

TEST(Losses, NllClosedForm) {
  Tape tape(false);
  Var y = tape.constant(Tensor({2, 3}, 0.4f));
  EXPECT_NEAR(loss_nll(y, tape.constant(Tensor({2, 3}, 1.0f)), y).value()[0],
              0.5 * std::log(2 * std::numbers::pi), 1e-6);

  std::mt19937 rng(7);
  const Tensor mu = random_tensor({10}, rng), sigma = random_tensor({10}, rng, 0.1f, 2.0f),
               target = random_tensor({10}, rng);
  double expect = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double s = sigma[i], d = target[i] - mu[i];
    expect += 0.5 * std::log(2 * std::numbers::pi * s * s) + d * d / (2 * s * s);
  }
  EXPECT_NEAR(loss_nll(tape.constant(mu), tape.constant(sigma), tape.constant(target)).value()[0],
              expect / 10, 1e-5);
  EXPECT_THROW(loss_nll(y, tape.constant(Tensor({2, 3}, 0.0f)), y), ShapeError);
}

TEST(Losses, NllGradientPointsToTarget) {
  std::mt19937 rng(8);
  Tape tape;
  const Tensor mu0 = random_tensor({16}, rng), target = random_tensor({16}, rng);
  Var mu = tape.leaf(mu0);
  Var loss = loss_nll(mu, tape.constant(Tensor({16}, 0.7f)), tape.constant(target));
  tape.backward(loss);
  const Tensor g = tape.grad(mu);
  for (std::size_t i = 0; i < 16; ++i) {
    if (mu0[i] > target[i]) EXPECT_GT(g[i], 0.0f);
    if (mu0[i] < target[i]) EXPECT_LT(g[i], 0.0f);
  }
}

Sample toy_sample(std::mt19937& rng, const ModelConfig& c) {
  return {random_tensor({c.in_len, 1, 8, 8}, rng), random_tensor({c.out_len, 1, 8, 8}, rng)};
}

TEST(Training, ZeroLearningRateKeepsParams) {
  std::mt19937 rng(9);
  const ModelConfig c = toy_config();
  const Sample s = toy_sample(rng, c);
  ParamSet p = init_params(c, 1);
  const ParamSet before = p;
  nd::AdamWOptions o;
  o.lr = 0.0f;
  nd::AdamW opt(p, o);
  for (int k = 0; k < 5; ++k) train_step(p, opt, c, {&s}, k);
  EXPECT_EQ(p, before);
}

TEST(Training, DeterministicAcrossRunsAndThreads) {
  std::mt19937 rng(10);
  const ModelConfig c = toy_config();
  std::vector<Sample> train_set, val_set;
  for (int k = 0; k < 5; ++k) train_set.push_back(toy_sample(rng, c));
  for (int k = 0; k < 2; ++k) val_set.push_back(toy_sample(rng, c));
  TrainOptions o;
  o.max_epochs = 3;
  o.batch_size = 2;
  o.seed = 4;
  const TrainResult a = train(train_set, val_set, c, o);
  const TrainResult b = train(train_set, val_set, c, o);
  o.threads = 3;
  const TrainResult d = train(train_set, val_set, c, o);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.best, d.best);
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_mae, d.history[e].val_mae);
  }
  EXPECT_EQ(a.steps, 9);
}

TEST(Training, EarlyStoppingKeepsBestEpoch) {
  std::mt19937 rng(11);
  const ModelConfig c = toy_config();
  std::vector<Sample> train_set{toy_sample(rng, c)}, val_set{toy_sample(rng, c)};
  TrainOptions o;
  o.max_epochs = 40;
  o.patience = 2;
  const TrainResult r = train(train_set, val_set, c, o);
  ASSERT_FALSE(r.history.empty());
  double best = r.history.front().val_mae;
  for (const auto& e : r.history) best = std::min(best, e.val_mae);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_mae, best);
  if (r.history.size() < 40) EXPECT_EQ(r.history.size(), r.best_epoch + 2);
  EXPECT_NEAR(evaluate_mae(r.best, c, val_set), best, 1e-12);
}

TEST(Training, DivergenceNamesStep) {
  std::mt19937 rng(12);
  const ModelConfig c = toy_config();
  Sample s = toy_sample(rng, c);
  s.target[0] = std::numeric_limits<float>::quiet_NaN();
  ParamSet p = init_params(c, 1);
  nd::AdamW opt(p, {});
  try {
    train_step(p, opt, c, {&s}, 17);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos) << e.what();
  }
}

TEST(Training, HistoryCsv) {
  std::ostringstream out;
  write_history_csv(out, {{1, 0.5, 0.25, 0.001f}});
  EXPECT_EQ(out.str(), "epoch,train_loss,val_mae,lr\n1,0.5,0.25,0.001\n");
}

TEST(Recursive, ShapesAndFirstWindow) {
  std::mt19937 rng(13);
  ModelConfig c = toy_config();
  const ParamSet p = init_params(c, 6);
  const Tensor x = random_tensor({4, 1, 8, 8}, rng);
  const Forecast one = recursive_forecast(p, c, x, 1);
  EXPECT_EQ(one.mean, predict(p, c, x).mean);
  const Forecast two = recursive_forecast(p, c, x, 2);
  EXPECT_EQ(two.mean.shape(), (Shape{6, 1, 8, 8}));
  // Window two is the forecast from the last 4 known frames: x[3], pred[0..2].
  Tensor next({4, 1, 8, 8});
  std::copy_n(x.data() + 3 * 64, 64, next.data());
  std::copy_n(one.mean.data(), 3 * 64, next.data() + 64);
  const Tensor second = predict(p, c, next).mean;
  for (std::size_t i = 0; i < second.size(); ++i) EXPECT_EQ(two.mean[3 * 64 + i], second[i]);
  EXPECT_THROW(recursive_forecast(p, c, x, 0), ShapeError);
}

}  // namespace
}  // namespace icessm::model
