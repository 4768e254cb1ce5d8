#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "icessm/error.hpp"
#include "icessm/metrics.hpp"
#include "json.hpp"

namespace icessm::metrics {
namespace {

Tensor random_tensor(nd::Shape shape, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

TEST(Scores, IdenticalIsPerfect) {
  std::mt19937 rng(1);
  const Tensor y = random_tensor({3, 5, 5}, rng);
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_EQ(mae(y, y), 0.0);
  EXPECT_EQ(nse(y, y), 100.0);
  EXPECT_EQ(iou(y, y), 1.0);
}

TEST(Scores, ConstantOffset) {
  const Tensor y({4, 4}, 0.5f);
  const Tensor p({4, 4}, 0.51f);
  EXPECT_NEAR(mae(p, y), 1.0, 1e-4);
  EXPECT_NEAR(rmse(p, y), 1.0, 1e-4);
}

TEST(Scores, MeanPredictorHasZeroNse) {
  const Tensor y({1, 4}, std::vector<float>{0.0f, 0.25f, 0.5f, 0.75f});
  const Tensor p({1, 4}, 0.375f);
  EXPECT_NEAR(nse(p, y), 0.0, 1e-9);
}

TEST(Scores, HandNseCase) {
  // ybar = 0.5, var sum = 0.25+0.01+0.01+0.25 = 0.52, resid = 0.01+0+0.04+0.01
  const Tensor y({2, 2}, std::vector<float>{0.0f, 0.4f, 0.6f, 1.0f});
  const Tensor p({2, 2}, std::vector<float>{0.1f, 0.4f, 0.8f, 0.9f});
  EXPECT_NEAR(nse(p, y), 100.0 * (1.0 - 0.06 / 0.52), 1e-4);
}

TEST(Scores, LandExcluded) {
  const Tensor y({1, 2}, std::vector<float>{0.2f, 0.0f});
  const Tensor p({1, 2}, std::vector<float>{0.2f, 0.9f});
  EXPECT_EQ(mae(p, y, {0, 1}), 0.0);
  EXPECT_THROW(mae(p, y, {1, 1}), DataError);
  EXPECT_THROW(mae(p, y, {1}), ShapeError);
}

TEST(Scores, ErrorsOnBadInput) {
  EXPECT_THROW(nse(Tensor({2, 2}, 0.1f), Tensor({2, 2}, 0.3f)), DataError);
  EXPECT_THROW(rmse(Tensor({2, 2}), Tensor({2, 3})), ShapeError);
}

TEST(Scores, PropertyRmseAtLeastMaeAndShiftInvariantNse) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = random_tensor({2, 6, 6}, rng), p = random_tensor({2, 6, 6}, rng);
    EXPECT_GE(rmse(p, y) + 1e-9, mae(p, y));
    Tensor ys = y, ps = p;
    for (float& v : ys.values()) v += 0.25f;
    for (float& v : ps.values()) v += 0.25f;
    EXPECT_NEAR(nse(ps, ys), nse(p, y), 1e-3);
    EXPECT_LE(nse(p, y), 100.0);
  }
}

TEST(Extent, CountsAtThreshold) {
  const Tensor f({1, 4}, std::vector<float>{0.1f, 0.15f, 0.5f, 0.0f});
  EXPECT_EQ(sie(f), 2.0);
  EXPECT_EQ(sie(f, 0.15, 625.0), 1250.0);
}

TEST(Iou, HandCases) {
  const Tensor a({1, 4}, std::vector<float>{1, 1, 0, 0});
  const Tensor b({1, 4}, std::vector<float>{0, 1, 1, 0});
  const Tensor c({1, 4}, std::vector<float>{0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_EQ(iou(a, c), 0.0);
  EXPECT_EQ(iou(Tensor({2, 2}), Tensor({2, 2})), 1.0);
}

TEST(Iou, SymmetricAndNestedMonotone) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor({5, 5}, rng), b = random_tensor({5, 5}, rng);
    EXPECT_EQ(iou(a, b), iou(b, a));
    // Growing a subset toward its superset never lowers the overlap.
    Tensor sub = a, mid = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i % 3 == 0) sub[i] = 0.0f;
      if (i % 6 == 0) mid[i] = 0.0f;
    }
    EXPECT_LE(iou(sub, a), iou(mid, a));
    EXPECT_LE(iou(mid, a), 1.0);
  }
}

TEST(Bias, MapValues) {
  std::mt19937 rng(2);
  const Tensor y = random_tensor({3, 3}, rng);
  const Tensor zero = bias_map(y, y);
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  Tensor p = y;
  for (float& v : p.values()) v += 0.125f;
  const Tensor shift = bias_map(p, y);
  for (float v : shift.values()) EXPECT_NEAR(v, 0.125f, 1e-6);
}

TEST(Bias, PpmRendering) {
  const auto path = std::filesystem::temp_directory_path() / "icessm_test_bias.ppm";
  // Checker of +0.2 / -0.2 with one zero cell.
  const Tensor b({2, 2}, std::vector<float>{0.2f, -0.2f, -0.2f, 0.0f});
  write_bias_ppm(b, path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  ASSERT_EQ(magic, "P6");
  ASSERT_EQ(w, 2u);
  ASSERT_EQ(h, 2u);
  ASSERT_EQ(maxval, 255u);
  unsigned char px[12];
  in.read(reinterpret_cast<char*>(px), 12);
  const unsigned char expect[12] = {255, 0, 0, 0, 0, 255, 0, 0, 255, 0, 0, 0};
  for (int i = 0; i < 12; ++i) EXPECT_EQ(px[i], expect[i]) << i;
}

TEST(Report, PerLeadAndJson) {
  std::mt19937 rng(6);
  std::vector<Tensor> preds, truths;
  for (int k = 0; k < 3; ++k) {
    preds.push_back(random_tensor({4, 1, 3, 3}, rng));
    truths.push_back(random_tensor({4, 1, 3, 3}, rng));
  }
  const std::vector<std::uint8_t> land = {1, 0, 0, 0, 0, 0, 0, 0, 0};
  const Report r = evaluate(preds, truths, land);
  ASSERT_EQ(r.per_lead_day.size(), 4u);
  // Lead day 2 pools frame 2 of each pair.
  Tensor p({3, 3, 3}), t({3, 3, 3});
  for (int k = 0; k < 3; ++k) {
    std::copy_n(preds[k].data() + 18, 9, p.data() + 9 * k);
    std::copy_n(truths[k].data() + 18, 9, t.data() + 9 * k);
  }
  EXPECT_NEAR(r.per_lead_day[2].mae, mae(p, t, land), 1e-9);
  EXPECT_NEAR(r.per_lead_day[2].rmse, rmse(p, t, land), 1e-9);
  EXPECT_NEAR(*r.per_lead_day[2].nse, nse(p, t, land), 1e-6);

  const auto j = nlohmann::json::parse(report_to_json(r));
  EXPECT_TRUE(j.contains("overall"));
  EXPECT_EQ(j["per_lead_day"].size(), 4u);
  EXPECT_EQ(j["per_lead_day"][0]["lead_day"], 1);

  const Report self = evaluate(truths, truths, land);
  EXPECT_EQ(self.overall.rmse, 0.0);
  EXPECT_EQ(self.overall.iou, 1.0);
}

}  // namespace
}  // namespace icessm::metrics
