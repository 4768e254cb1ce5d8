#include "icessm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "icessm/error.hpp"
#include "json.hpp"

namespace icessm::metrics {

namespace {

std::size_t plane_size(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("metrics: need [..., H, W], got " + nd::to_string(t.shape()));
  return t.dim(t.rank() - 2) * t.dim(t.rank() - 1);
}

void check_pair(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("metrics: shapes " + nd::to_string(pred.shape()) + " and " +
                     nd::to_string(truth.shape()) + " differ");
  }
  if (!land.empty() && land.size() != plane_size(pred)) throw ShapeError("metrics: land mask size differs from H*W");
}

bool ocean(const std::vector<std::uint8_t>& land, std::size_t i, std::size_t plane) {
  return land.empty() || !land[i % plane];
}

// Running sums over ocean pixels.
struct Accum {
  std::size_t n = 0;
  double abs = 0, sq = 0, y = 0, yy = 0;
  std::size_t inter = 0, uni = 0;

  void add(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land,
           std::size_t begin, std::size_t end, std::size_t plane) {
    for (std::size_t i = begin; i < end; ++i) {
      const double p = pred[i], t = truth[i];
      const bool a = p >= kIceThreshold, b = t >= kIceThreshold;
      inter += a && b;
      uni += a || b;
      if (!ocean(land, i, plane)) continue;
      ++n;
      abs += std::abs(p - t);
      sq += (p - t) * (p - t);
      y += t;
      yy += t * t;
    }
  }
};

void require_ocean(std::size_t n) {
  if (n == 0) throw DataError("metrics: no ocean pixels to score");
}

}  // namespace

double rmse(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land) {
  check_pair(pred, truth, land);
  const std::size_t plane = plane_size(pred);
  double sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!ocean(land, i, plane)) continue;
    const double d = static_cast<double>(pred[i]) - truth[i];
    sq += d * d;
    ++n;
  }
  require_ocean(n);
  return 100.0 * std::sqrt(sq / static_cast<double>(n));
}

double mae(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land) {
  check_pair(pred, truth, land);
  const std::size_t plane = plane_size(pred);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!ocean(land, i, plane)) continue;
    sum += std::abs(static_cast<double>(pred[i]) - truth[i]);
    ++n;
  }
  require_ocean(n);
  return 100.0 * sum / static_cast<double>(n);
}

double nse(const Tensor& pred, const Tensor& truth, const std::vector<std::uint8_t>& land) {
  check_pair(pred, truth, land);
  const std::size_t plane = plane_size(pred);
  double mean = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!ocean(land, i, plane)) continue;
    mean += truth[i];
    ++n;
  }
  require_ocean(n);
  mean /= static_cast<double>(n);
  double resid = 0, var = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!ocean(land, i, plane)) continue;
    const double d = static_cast<double>(pred[i]) - truth[i], e = truth[i] - mean;
    resid += d * d;
    var += e * e;
  }
  if (var == 0.0) throw DataError("nse: truth has zero variance over the ocean");
  return 100.0 * (1.0 - resid / var);
}

double sie(const Tensor& frame, double threshold, double cell_area) {
  const auto count = std::count_if(frame.values().begin(), frame.values().end(),
                                   [threshold](float v) { return v >= threshold; });
  return static_cast<double>(count) * cell_area;
}

double iou(const Tensor& pred, const Tensor& truth, double threshold) {
  check_pair(pred, truth, {});
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] >= threshold, b = truth[i] >= threshold;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Tensor bias_map(const Tensor& pred, const Tensor& truth) {
  check_pair(pred, truth, {});
  Tensor out(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] - truth[i];
  return out;
}

void write_bias_ppm(const Tensor& bias, const std::filesystem::path& path, double scale) {
  const std::size_t plane = plane_size(bias);
  if (bias.size() != plane) throw ShapeError("write_bias_ppm: expected one frame, got " + nd::to_string(bias.shape()));
  const std::size_t h = bias.dim(bias.rank() - 2), w = bias.dim(bias.rank() - 1);
  if (scale <= 0.0) {
    for (float v : bias.values()) scale = std::max(scale, static_cast<double>(std::abs(v)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_bias_ppm: cannot open " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (float v : bias.values()) {
    const double level = scale > 0.0 ? std::min(1.0, std::abs(v) / scale) : 0.0;
    const auto c = static_cast<unsigned char>(std::lround(255.0 * level));
    const unsigned char rgb[3] = {v > 0 ? c : (unsigned char)0, 0, v < 0 ? c : (unsigned char)0};
    out.write(reinterpret_cast<const char*>(rgb), 3);
  }
  if (!out) throw FormatError("write_bias_ppm: write failed for " + path.string());
}

Report evaluate(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths,
                const std::vector<std::uint8_t>& land, double cell_area) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw ShapeError("evaluate: need equal, nonempty forecast and truth lists");
  }
  const std::size_t lead = preds.front().dim(0);
  const std::size_t plane = plane_size(preds.front());
  for (std::size_t k = 0; k < preds.size(); ++k) {
    check_pair(preds[k], truths[k], land);
    if (preds[k].shape() != preds.front().shape()) throw ShapeError("evaluate: forecasts differ in shape");
  }
  const std::size_t frame = preds.front().size() / lead;

  std::vector<Accum> per(lead);
  std::vector<double> sie_p(lead, 0.0), sie_t(lead, 0.0);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    for (std::size_t d = 0; d < lead; ++d) {
      per[d].add(preds[k], truths[k], land, d * frame, (d + 1) * frame, plane);
      for (std::size_t i = d * frame; i < (d + 1) * frame; ++i) {
        sie_p[d] += preds[k][i] >= kIceThreshold ? cell_area : 0.0;
        sie_t[d] += truths[k][i] >= kIceThreshold ? cell_area : 0.0;
      }
    }
  }

  const double samples = static_cast<double>(preds.size());
  const auto score = [](const Accum& a, double sp, double st) {
    require_ocean(a.n);
    const double n = static_cast<double>(a.n);
    Scores s;
    s.rmse = 100.0 * std::sqrt(a.sq / n);
    s.mae = 100.0 * a.abs / n;
    const double var = a.yy - a.y * a.y / n;
    if (var > 1e-12 * std::max(1.0, a.yy)) s.nse = 100.0 * (1.0 - a.sq / var);
    s.iou = a.uni == 0 ? 1.0 : static_cast<double>(a.inter) / static_cast<double>(a.uni);
    s.sie_pred = sp;
    s.sie_truth = st;
    return s;
  };

  Report report;
  Accum all;
  double total_p = 0, total_t = 0;
  for (std::size_t d = 0; d < lead; ++d) {
    report.per_lead_day.push_back(score(per[d], sie_p[d] / samples, sie_t[d] / samples));
    all.n += per[d].n;
    all.abs += per[d].abs;
    all.sq += per[d].sq;
    all.y += per[d].y;
    all.yy += per[d].yy;
    all.inter += per[d].inter;
    all.uni += per[d].uni;
    total_p += sie_p[d];
    total_t += sie_t[d];
  }
  const double frames = samples * static_cast<double>(lead);
  report.overall = score(all, total_p / frames, total_t / frames);
  return report;
}

std::string report_to_json(const Report& report) {
  const auto encode = [](const Scores& s) {
    nlohmann::ordered_json j;
    j["rmse"] = s.rmse;
    j["mae"] = s.mae;
    j["nse"] = s.nse ? nlohmann::ordered_json(*s.nse) : nlohmann::ordered_json(nullptr);
    j["iou"] = s.iou;
    j["sie_pred"] = s.sie_pred;
    j["sie_truth"] = s.sie_truth;
    return j;
  };
  nlohmann::ordered_json j;
  j["overall"] = encode(report.overall);
  j["per_lead_day"] = nlohmann::ordered_json::array();
  for (std::size_t d = 0; d < report.per_lead_day.size(); ++d) {
    auto entry = encode(report.per_lead_day[d]);
    entry["lead_day"] = d + 1;
    j["per_lead_day"].push_back(entry);
  }
  return j.dump(2) + "\n";
}

}  // namespace icessm::metrics
