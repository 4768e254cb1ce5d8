#pragma once

// Sea-ice grids: container format, preprocessing, sliding windows and a
// synthetic generator.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "icessm/nd/tensor.hpp"

namespace icessm::data {

using nd::Tensor;

/// A (T,H,W) concentration volume. Missing values are NaN.
struct Grid3 {
  Tensor frames;                    // [T,H,W]
  std::vector<std::int64_t> dates;  // days since epoch, strictly increasing
  std::vector<std::uint8_t> land;   // H*W, 1 = land

  std::size_t time() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
  std::size_t pixels() const { return height() * width(); }

  /// Throws ShapeError/DataError when fields disagree or dates are not increasing.
  void validate() const;
  bool operator==(const Grid3&) const = default;
};

/// An all-ocean grid of `fill` with consecutive dates from `start`.
Grid3 make_grid(std::size_t t, std::size_t h, std::size_t w, float fill = 0.0f,
                std::int64_t start = 0);

/// Bitwise comparison that treats NaN as equal to NaN.
bool same_grid(const Grid3& a, const Grid3& b);

/// Expands the dates to a contiguous daily range. An absent day, or a present
/// frame with no finite value, becomes the mean of the nearest valid frames
/// before and after it. Throws DataError when one side has none.
Grid3 fill_missing_dates(const Grid3& g);

/// 1 where the missing fraction over all frames is strictly above `threshold`.
std::vector<std::uint8_t> land_mask(const Grid3& g, double threshold = 0.95);

/// Sets the land mask from land_mask() and zeroes land pixels in every frame.
Grid3 detect_land(const Grid3& g, double threshold = 0.95);

struct IdwOptions {
  std::size_t spatial_radius = 3;
  std::size_t temporal_radius = 3;
  double sigma = 1.5;       // gaussian bandwidth, in pixels
  double time_scale = 1.0;  // pixels per day
};

/// Fills missing ocean pixels with a gaussian-weighted mean of originally
/// valid ocean neighbours inside the (t,i,j) box. Valid pixels are untouched.
/// Throws DataError for a missing pixel with no neighbour in range.
Grid3 st_idw_fill(const Grid3& g, const IdwOptions& options = {});

struct PreprocessOptions {
  double land_threshold = 0.95;
  std::optional<IdwOptions> idw = IdwOptions{};
};

/// fill_missing_dates, detect_land, st_idw_fill (when enabled), zero land.
/// Throws DataError if missing ocean values remain.
Grid3 preprocess(const Grid3& g, const PreprocessOptions& options = {});

struct SampleWindow {
  Tensor input;   // [L_i,1,H,W]
  Tensor target;  // [L_o,1,H,W]
  std::int64_t anchor = 0;  // date of the first target frame
};

/// floor((T - L_i - L_o) / stride) + 1 windows; DataError when T < L_i + L_o.
std::size_t window_count(std::size_t t, std::size_t in_len, std::size_t out_len,
                         std::size_t stride = 1);
std::vector<SampleWindow> windows(const Grid3& g, std::size_t in_len, std::size_t out_len,
                                  std::size_t stride = 1);

struct Split {
  Grid3 train, val, test;
};

/// Consecutive, non-overlapping blocks of frames: the first `train_fraction`
/// of T, then `val_fraction`, then the rest. DataError when a block would be
/// shorter than `min_len`.
Split split_chronological(const Grid3& g, double train_fraction, double val_fraction,
                          std::size_t min_len);

/// Frames [begin, end) with their dates and the same land mask.
Grid3 slice_frames(const Grid3& g, std::size_t begin, std::size_t end);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t t = 64, h = 16, w = 16;
  std::size_t n_blobs = 4;
  double drift = 0.25;         // pixels per day
  double season_period = 365.0;
  double season_amplitude = 0.3;
  bool land = true;            // fixed corner block
  double missing_fraction = 0.0;  // random ocean pixels set to NaN
  std::int64_t start_date = 0;
};

/// Drifting gaussian blobs on a torus with a seasonal amplitude cycle,
/// clamped to [0,1]. Land pixels are NaN with the mask set.
Grid3 synth_generate(const SynthOptions& options);

/// Binary container, little-endian. Throws FormatError on bad input.
void write_grid(const Grid3& g, const std::filesystem::path& path);
Grid3 read_grid(const std::filesystem::path& path);

}  // namespace icessm::data
