#pragma once

// Scan orders over (T,H,W) spatiotemporal cuboids.
//
// A voxel's linear index is t*H*W + h*W + w. A ScanOrder is a permutation of
// those indices: position p in the scan visits voxel sequence()[p].

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "icessm/nd/tensor.hpp"

namespace icessm::sfc {

struct Dims {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t count() const noexcept { return t * h * w; }
  std::size_t linear(std::size_t ti, std::size_t hi, std::size_t wi) const noexcept {
    return (ti * h + hi) * w + wi;
  }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& dims);

enum class Kind { raster, zorder, peano, hilbert_spatial_first, hilbert_temporal_first };
enum class Direction { forward, backward };
enum class Axis { t = 0, h = 1, w = 2 };

using AxisPriority = std::array<Axis, 3>;
inline constexpr AxisPriority kTemporalFirst{Axis::t, Axis::h, Axis::w};
inline constexpr AxisPriority kSpatialFirst{Axis::h, Axis::w, Axis::t};

/// Short names used on the command line and in golden files:
/// raster, zorder, peano, hilbert-s, hilbert-t.
std::string_view kind_name(Kind kind);
Kind parse_kind(std::string_view name);
bool is_hilbert(Kind kind);
std::string_view direction_name(Direction direction);

class ScanOrder {
 public:
  /// Validates that `forward` is a permutation of 0..dims.count()-1.
  ScanOrder(Dims dims, Kind kind, std::vector<std::uint32_t> forward,
            Direction direction = Direction::forward);

  const Dims& dims() const noexcept { return dims_; }
  Kind kind() const noexcept { return kind_; }
  Direction direction() const noexcept { return direction_; }
  std::size_t size() const noexcept { return sequence_.size(); }

  /// Visiting order in this order's direction.
  const std::vector<std::uint32_t>& sequence() const noexcept { return sequence_; }
  /// The generator's forward order, regardless of direction.
  std::vector<std::uint32_t> forward() const;
  /// Position of a voxel in sequence().
  std::uint32_t position(std::size_t linear_index) const { return position_[linear_index]; }

  /// Same voxels visited in exactly reversed order.
  ScanOrder reversed() const;

  bool operator==(const ScanOrder& other) const {
    return dims_ == other.dims_ && kind_ == other.kind_ && sequence_ == other.sequence_;
  }

 private:
  ScanOrder(Dims dims, Kind kind, Direction direction, std::vector<std::uint32_t> sequence,
            std::vector<std::uint32_t> position);

  Dims dims_;
  Kind kind_;
  Direction direction_;
  std::vector<std::uint32_t> sequence_;
  std::vector<std::uint32_t> position_;
};

/// Generalized Hilbert curve on an arbitrary cuboid. Every consecutive pair of
/// voxels differs by one step along exactly one axis. The first axis in
/// `priority` that admits a corner-to-corner traversal becomes the major axis.
ScanOrder gilbert3d(const Dims& dims, const AxisPriority& priority = kTemporalFirst);
ScanOrder raster(const Dims& dims);
/// Morton order with ceil(log2 dim) bits per axis; out-of-range codes are skipped.
ScanOrder zorder(const Dims& dims);
/// Peano curve on the enclosing 3^k cube, restricted to in-range voxels.
ScanOrder peano(const Dims& dims);
ScanOrder make_order(Kind kind, const Dims& dims);

/// n_routes in {1,2,4}: forward, backward, then forward/backward of the same
/// kind regenerated on the 90-degree rotated spatial grid.
std::vector<ScanOrder> routes(const ScanOrder& order, int n_routes);

/// volume [T,C,H,W] -> sequence [N,C]; the channel axis is carried, not scanned.
nd::Tensor apply(const ScanOrder& order, const nd::Tensor& volume);
/// sequence [N,C] -> volume [T,C,H,W].
nd::Tensor inverse_apply(const ScanOrder& order, const nd::Tensor& sequence);

struct LocalityScore {
  double mean_gap = 0.0;
  double median_gap = 0.0;
  double geometric_mean_gap = 0.0;  // exp(mean log gap)
  std::uint64_t max_gap = 0;
  std::array<double, 3> axis_mean_gap{};  // t, h, w; 0 when an axis has no neighbour pairs
  std::uint64_t pairs = 0;
};

/// Scan-position gaps over all 6-neighbour voxel pairs.
LocalityScore locality_score(const ScanOrder& order);

/// Golden-file format: "kind T H W direction" then the N indices on one line.
void write_golden(std::ostream& out, const ScanOrder& order);
ScanOrder read_golden(std::istream& in);

}  // namespace icessm::sfc
