#pragma once

// Forecast scores over ocean pixels and bias-map rendering.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icessm/nd/tensor.hpp"

namespace icessm::metrics {

using nd::Tensor;

/// pred and truth share a shape [..., H, W]. `land` is empty or holds H*W
/// flags; land pixels are excluded. Results are percentages.
/// Throws ShapeError on mismatched shapes, DataError when no ocean pixel remains.
double rmse(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land = {});
double mae(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land = {});
/// Throws DataError when truth is constant over the ocean.
double nse(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land = {});

inline constexpr double kIceThreshold = 0.15;

/// Count of cells at or above `threshold`, times `cell_area`.
double sie(const Tensor& frame, double threshold = kIceThreshold, double cell_area = 1.0);
/// |A and B| / |A or B| of the thresholded masks; 1 when both are empty.
double iou(const Tensor& pred, const Tensor& truth, double threshold = kIceThreshold);

/// pred - truth.
Tensor bias_map(const Tensor& pred, const Tensor& truth);
/// Binary PPM of an [H,W] (or [1,H,W]) bias: red for positive, blue for
/// negative, brightness |b| / scale clipped at 1. scale <= 0 uses max |b|.
void write_bias_ppm(const Tensor& bias, const std::filesystem::path& path, double scale = 0.0);

struct Scores {
  double rmse = 0, mae = 0;
  std::optional<double> nse;  // absent when truth has no variance
  double iou = 0;
  double sie_pred = 0, sie_truth = 0;  // mean per frame
};

struct Report {
  Scores overall;
  std::vector<Scores> per_lead_day;
};

/// preds/truths: matching lists of [L,1,H,W] (or [L,H,W]) forecasts; lead
/// day k pools frame k of every pair.
Report evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths,
                const std::vector<std::uint8_t>& land = {}, double cell_area = 1.0);

/// {"overall": {...}, "per_lead_day": [{...}, ...]}
std::string report_to_json(const Report& report);

}  // namespace icessm::metrics
