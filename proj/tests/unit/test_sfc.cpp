#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "icessm/error.hpp"
#include "icessm/sfc.hpp"

namespace icessm::sfc {
namespace {

struct Coord {
  long t, h, w;
};

Coord decode(const Dims& d, std::size_t li) {
  return {static_cast<long>(li / (d.h * d.w)), static_cast<long>((li / d.w) % d.h),
          static_cast<long>(li % d.w)};
}

long manhattan(const Dims& d, std::size_t a, std::size_t b) {
  const Coord ca = decode(d, a);
  const Coord cb = decode(d, b);
  return std::labs(ca.t - cb.t) + std::labs(ca.h - cb.h) + std::labs(ca.w - cb.w);
}

bool is_permutation(const std::vector<std::uint32_t>& seq) {
  std::vector<std::uint32_t> sorted = seq;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i) return false;
  }
  return true;
}

bool all_unit_steps(const ScanOrder& order) {
  const auto& s = order.sequence();
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (manhattan(order.dims(), s[i - 1], s[i]) != 1) return false;
  }
  return true;
}

const Kind kAllKinds[] = {Kind::raster, Kind::zorder, Kind::peano, Kind::hilbert_spatial_first,
                          Kind::hilbert_temporal_first};

TEST(Gilbert3d, LineDegeneratesToRaster) {
  const ScanOrder o = gilbert3d({1, 1, 4});
  EXPECT_EQ(o.sequence(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(Gilbert3d, CubeOfTwoIsUnitStepPath) {
  const ScanOrder o = gilbert3d({2, 2, 2});
  ASSERT_EQ(o.size(), 8u);
  EXPECT_TRUE(is_permutation(o.sequence()));
  EXPECT_TRUE(all_unit_steps(o));
  EXPECT_EQ(o.sequence().front(), 0u);
}

TEST(Gilbert3d, OddCuboid) {
  for (const auto& priority : {kTemporalFirst, kSpatialFirst}) {
    const ScanOrder o = gilbert3d({3, 5, 2}, priority);
    ASSERT_EQ(o.size(), 30u);
    EXPECT_TRUE(is_permutation(o.sequence()));
    EXPECT_TRUE(all_unit_steps(o));
  }
}

TEST(Gilbert3d, ExhaustiveAdjacencyUpToTen) {
  for (std::size_t t = 1; t <= 10; ++t) {
    for (std::size_t h = 1; h <= 10; ++h) {
      for (std::size_t w = 1; w <= 10; ++w) {
        for (const auto& priority : {kTemporalFirst, kSpatialFirst}) {
          const ScanOrder o = gilbert3d({t, h, w}, priority);
          ASSERT_TRUE(all_unit_steps(o)) << t << "x" << h << "x" << w;
        }
      }
    }
  }
}

TEST(Gilbert3d, PriorityChangesTraversal) {
  const ScanOrder temporal = gilbert3d({4, 4, 4}, kTemporalFirst);
  const ScanOrder spatial = gilbert3d({4, 4, 4}, kSpatialFirst);
  EXPECT_EQ(temporal.kind(), Kind::hilbert_temporal_first);
  EXPECT_EQ(spatial.kind(), Kind::hilbert_spatial_first);
  EXPECT_NE(temporal.sequence(), spatial.sequence());
  // The walk ends at the far end of its major axis.
  EXPECT_EQ(decode(temporal.dims(), temporal.sequence().back()).t, 3);
  EXPECT_EQ(decode(spatial.dims(), spatial.sequence().back()).h, 3);
}

TEST(ScanOrder, RejectsZeroDimension) {
  for (Kind k : kAllKinds) {
    EXPECT_THROW(make_order(k, {0, 2, 2}), ShapeError);
    EXPECT_THROW(make_order(k, {2, 0, 2}), ShapeError);
  }
}

TEST(ScanOrder, RejectsNonPermutation) {
  EXPECT_THROW(ScanOrder({1, 1, 3}, Kind::raster, {0, 0, 2}), ShapeError);
  EXPECT_THROW(ScanOrder({1, 1, 3}, Kind::raster, {0, 1}), ShapeError);
}

TEST(Raster, IsIdentity) {
  EXPECT_EQ(raster({1, 2, 2}).sequence(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
  EXPECT_EQ(raster({2, 1, 2}).sequence(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
  const LocalityScore s = locality_score(raster({2, 2, 2}));
  EXPECT_DOUBLE_EQ(s.axis_mean_gap[0], 4.0);
  EXPECT_DOUBLE_EQ(s.axis_mean_gap[1], 2.0);
  EXPECT_DOUBLE_EQ(s.axis_mean_gap[2], 1.0);
}

// Oracle: sort cells by an explicitly interleaved Morton key.
std::vector<std::uint32_t> morton_oracle(const Dims& d) {
  auto bits = [](std::size_t n) {
    unsigned b = 0;
    while ((1u << b) < n) ++b;
    return b;
  };
  const unsigned bt = bits(d.t), bh = bits(d.h), bw = bits(d.w);
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed;
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        std::uint64_t key = 0;
        unsigned pos = 0;
        for (unsigned level = 0; level < std::max({bt, bh, bw}); ++level) {
          if (level < bw) key |= static_cast<std::uint64_t>((w >> level) & 1) << pos++;
          if (level < bh) key |= static_cast<std::uint64_t>((h >> level) & 1) << pos++;
          if (level < bt) key |= static_cast<std::uint64_t>((t >> level) & 1) << pos++;
        }
        keyed.emplace_back(key, static_cast<std::uint32_t>(d.linear(t, h, w)));
      }
    }
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::uint32_t> out;
  for (auto& [key, li] : keyed) out.push_back(li);
  return out;
}

TEST(ZOrder, MatchesInterleaveOracle) {
  EXPECT_EQ(zorder({1, 2, 2}).sequence(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
  EXPECT_EQ(zorder({2, 2, 2}).sequence(), (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  for (const Dims d : {Dims{1, 3, 3}, Dims{2, 2, 2}, Dims{3, 5, 7}, Dims{8, 4, 2}}) {
    EXPECT_EQ(zorder(d).sequence(), morton_oracle(d)) << to_string(d);
  }
  EXPECT_TRUE(is_permutation(zorder({1, 3, 3}).sequence()));
}

TEST(Peano, LineAndPlane) {
  EXPECT_EQ(peano({1, 1, 3}).sequence(), (std::vector<std::uint32_t>{0, 1, 2}));
  const ScanOrder plane = peano({1, 3, 3});
  EXPECT_EQ(plane.sequence(), (std::vector<std::uint32_t>{0, 1, 2, 5, 4, 3, 6, 7, 8}));
  EXPECT_TRUE(all_unit_steps(plane));
  EXPECT_TRUE(is_permutation(peano({2, 2, 2}).sequence()));
}

TEST(Peano, FullCubesAreUnitStep) {
  EXPECT_TRUE(all_unit_steps(peano({3, 3, 3})));
  EXPECT_TRUE(all_unit_steps(peano({9, 9, 9})));
}

TEST(Routes, CountsAndReversal) {
  const ScanOrder f = gilbert3d({2, 2, 2});
  EXPECT_EQ(routes(f, 1).size(), 1u);
  const auto two = routes(f, 2);
  ASSERT_EQ(two.size(), 2u);
  std::vector<std::uint32_t> rev(f.sequence().rbegin(), f.sequence().rend());
  EXPECT_EQ(two[1].sequence(), rev);
  EXPECT_EQ(two[1].direction(), Direction::backward);
  EXPECT_THROW(routes(f, 3), ShapeError);
  EXPECT_THROW(routes(f, 0), ShapeError);
}

TEST(Routes, FourDistinctBijections) {
  const auto four = routes(gilbert3d({2, 2, 2}), 4);
  ASSERT_EQ(four.size(), 4u);
  std::set<std::vector<std::uint32_t>> distinct;
  for (const auto& r : four) {
    EXPECT_TRUE(is_permutation(r.sequence()));
    distinct.insert(r.sequence());
  }
  EXPECT_EQ(distinct.size(), 4u);
  // The rotated routes keep unit steps.
  EXPECT_TRUE(all_unit_steps(four[2]));
  EXPECT_TRUE(all_unit_steps(four[3]));
}

TEST(Routes, RotatedRasterOnRectangle) {
  const auto four = routes(raster({1, 2, 3}), 4);
  // Rotated raster walks columns of the original grid.
  EXPECT_EQ(four[2].sequence(), (std::vector<std::uint32_t>{3, 0, 4, 1, 5, 2}));
}

TEST(ReverseProperty, DoubleReverseIsIdentity) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  for (int i = 0; i < 30; ++i) {
    const Dims d{dim(rng), dim(rng), dim(rng)};
    for (Kind k : kAllKinds) {
      const ScanOrder o = make_order(k, d);
      EXPECT_EQ(o.reversed().reversed().sequence(), o.sequence());
      EXPECT_EQ(o.reversed().forward(), o.sequence());
    }
  }
}

TEST(Apply, RasterIsPlainFlatten) {
  nd::Tensor v({2, 1, 2, 3});
  std::iota(v.values().begin(), v.values().end(), 0.0f);
  const nd::Tensor seq = apply(raster({2, 2, 3}), v);
  EXPECT_EQ(seq.shape(), (nd::Shape{12, 1}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(seq[i], static_cast<float>(i));
}

TEST(Apply, LinearIndexVolumeYieldsOrder) {
  const ScanOrder o = gilbert3d({2, 2, 2});
  nd::Tensor v({2, 1, 2, 2});
  std::iota(v.values().begin(), v.values().end(), 0.0f);
  const nd::Tensor seq = apply(o, v);
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_EQ(seq[i], static_cast<float>(o.sequence()[i]));
}

TEST(Apply, RoundTripWithChannels) {
  std::mt19937 rng(11);
  std::normal_distribution<float> nrm;
  for (Kind k : kAllKinds) {
    const Dims d{3, 4, 5};
    const ScanOrder o = make_order(k, d);
    nd::Tensor v({3, 2, 4, 5});
    for (float& x : v.values()) x = nrm(rng);
    EXPECT_EQ(inverse_apply(o, apply(o, v)), v);
    EXPECT_EQ(inverse_apply(o.reversed(), apply(o.reversed(), v)), v);
  }
}

TEST(Apply, ShapeMismatchThrows) {
  EXPECT_THROW(apply(raster({2, 2, 2}), nd::Tensor({2, 1, 2, 3})), ShapeError);
  EXPECT_THROW(inverse_apply(raster({2, 2, 2}), nd::Tensor({7, 1})), ShapeError);
}

TEST(Locality, MonotoneOrdersShareMeanGapOnCubes) {
  // Along any grid line a per-axis monotone order's gaps telescope, so raster
  // and Morton have identical totals on power-of-two cubes.
  const LocalityScore r = locality_score(raster({8, 8, 8}));
  const LocalityScore z = locality_score(zorder({8, 8, 8}));
  EXPECT_NEAR(r.mean_gap, 73.0 / 3.0, 1e-12);
  EXPECT_NEAR(z.mean_gap, r.mean_gap, 1e-12);
  EXPECT_EQ(r.max_gap, 64u);
}

TEST(Locality, HilbertHasTighterTypicalGaps) {
  const LocalityScore r = locality_score(raster({8, 8, 8}));
  const LocalityScore h = locality_score(gilbert3d({8, 8, 8}));
  const LocalityScore z = locality_score(zorder({8, 8, 8}));
  EXPECT_LT(h.median_gap, r.median_gap);
  EXPECT_LT(h.geometric_mean_gap, z.geometric_mean_gap);
  EXPECT_LT(z.geometric_mean_gap, r.geometric_mean_gap);
  EXPECT_EQ(h.pairs, 3u * 7u * 64u);
}

TEST(Golden, RoundTripAndFormat) {
  const ScanOrder o = raster({1, 2, 2});
  std::ostringstream out;
  write_golden(out, o);
  EXPECT_EQ(out.str(), "raster 1 2 2 forward\n0 1 2 3\n");
  const ScanOrder back = gilbert3d({3, 2, 2}).reversed();
  std::stringstream io;
  write_golden(io, back);
  const ScanOrder parsed = read_golden(io);
  EXPECT_EQ(parsed.sequence(), back.sequence());
  EXPECT_EQ(parsed.direction(), Direction::backward);
  EXPECT_EQ(parsed.kind(), Kind::hilbert_temporal_first);
}

TEST(Golden, RejectsMalformed) {
  std::istringstream truncated("raster 1 2 2 forward\n0 1 2\n");
  EXPECT_THROW(read_golden(truncated), FormatError);
  std::istringstream duplicate("raster 1 2 2 forward\n0 1 1 3\n");
  EXPECT_THROW(read_golden(duplicate), FormatError);
  std::istringstream kind("spiral 1 2 2 forward\n0 1 2 3\n");
  EXPECT_THROW(read_golden(kind), FormatError);
}

TEST(Determinism, IdenticalInputsIdenticalOrders) {
  for (Kind k : kAllKinds) EXPECT_EQ(make_order(k, {5, 6, 7}), make_order(k, {5, 6, 7}));
}

}  // namespace
}  // namespace icessm::sfc
