#include "icessm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "icessm/error.hpp"
#include "icessm/le_io.hpp"

namespace icessm::data {

namespace {

constexpr char kMagic[6] = {'S', 'I', 'C', 'G', '1', '\0'};
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

bool frame_has_value(const float* frame, std::size_t n) {
  return std::any_of(frame, frame + n, [](float v) { return std::isfinite(v); });
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& flags) {
  std::vector<std::uint8_t> bytes((flags.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return bytes;
}

bool bit(const std::vector<std::uint8_t>& bytes, std::size_t i) {
  return (bytes[i / 8] >> (i % 8)) & 1u;
}

}  // namespace

void Grid3::validate() const {
  if (frames.rank() != 3) throw ShapeError("grid: frames must be [T,H,W], got " + nd::to_string(frames.shape()));
  if (dates.size() != time()) {
    throw ShapeError("grid: " + std::to_string(dates.size()) + " dates for " +
                     std::to_string(time()) + " frames");
  }
  if (land.size() != pixels()) throw ShapeError("grid: land mask size differs from H*W");
  for (std::size_t t = 1; t < dates.size(); ++t) {
    if (dates[t] <= dates[t - 1]) {
      throw DataError("grid: dates not strictly increasing at index " + std::to_string(t));
    }
  }
}

Grid3 make_grid(std::size_t t, std::size_t h, std::size_t w, float fill, std::int64_t start) {
  Grid3 g;
  g.frames = Tensor({t, h, w}, fill);
  g.dates.resize(t);
  for (std::size_t i = 0; i < t; ++i) g.dates[i] = start + static_cast<std::int64_t>(i);
  g.land.assign(h * w, 0);
  return g;
}

bool same_grid(const Grid3& a, const Grid3& b) {
  if (a.frames.shape() != b.frames.shape() || a.dates != b.dates || a.land != b.land) return false;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const float x = a.frames[i], y = b.frames[i];
    if (std::isnan(x) && std::isnan(y)) continue;
    if (std::memcmp(&x, &y, sizeof(float)) != 0) return false;
  }
  return true;
}

Grid3 fill_missing_dates(const Grid3& g) {
  g.validate();
  if (g.time() == 0) return g;
  const std::size_t n = g.pixels();
  const std::int64_t first = g.dates.front(), last = g.dates.back();
  const std::size_t span = static_cast<std::size_t>(last - first) + 1;

  // Slot of each output day in the input, or -1.
  std::vector<std::ptrdiff_t> source(span, -1);
  for (std::size_t t = 0; t < g.time(); ++t) {
    if (frame_has_value(g.frames.data() + t * n, n)) {
      source[static_cast<std::size_t>(g.dates[t] - first)] = static_cast<std::ptrdiff_t>(t);
    }
  }

  Grid3 out;
  out.frames = Tensor({span, g.height(), g.width()});
  out.dates.resize(span);
  out.land = g.land;
  for (std::size_t d = 0; d < span; ++d) {
    out.dates[d] = first + static_cast<std::int64_t>(d);
    float* dst = out.frames.data() + d * n;
    if (source[d] >= 0) {
      std::copy_n(g.frames.data() + source[d] * n, n, dst);
      continue;
    }
    std::ptrdiff_t before = -1, after = -1;
    for (std::size_t k = d; k-- > 0;)
      if (source[k] >= 0) { before = source[k]; break; }
    for (std::size_t k = d + 1; k < span; ++k)
      if (source[k] >= 0) { after = source[k]; break; }
    if (before < 0 || after < 0) {
      throw DataError("fill_missing_dates: day " + std::to_string(out.dates[d]) +
                      " has no valid frame " + (before < 0 ? "before" : "after") + " it");
    }
    const float* a = g.frames.data() + before * n;
    const float* b = g.frames.data() + after * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = 0.5f * (a[i] + b[i]);
  }
  return out;
}

std::vector<std::uint8_t> land_mask(const Grid3& g, double threshold) {
  g.validate();
  const std::size_t n = g.pixels(), t_len = g.time();
  std::vector<std::uint8_t> mask(n, 0);
  if (t_len == 0) return mask;
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t missing = 0;
    for (std::size_t t = 0; t < t_len; ++t) missing += std::isnan(g.frames[t * n + p]) ? 1 : 0;
    mask[p] = static_cast<double>(missing) / static_cast<double>(t_len) > threshold ? 1 : 0;
  }
  return mask;
}

Grid3 detect_land(const Grid3& g, double threshold) {
  Grid3 out = g;
  out.land = land_mask(g, threshold);
  const std::size_t n = out.pixels();
  for (std::size_t t = 0; t < out.time(); ++t)
    for (std::size_t p = 0; p < n; ++p)
      if (out.land[p]) out.frames[t * n + p] = 0.0f;
  return out;
}

Grid3 st_idw_fill(const Grid3& g, const IdwOptions& options) {
  g.validate();
  if (!(options.sigma > 0.0)) throw ShapeError("st_idw_fill: sigma must be positive");
  const std::ptrdiff_t t_len = static_cast<std::ptrdiff_t>(g.time());
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height());
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.width());
  const std::ptrdiff_t rs = static_cast<std::ptrdiff_t>(options.spatial_radius);
  const std::ptrdiff_t rt = static_cast<std::ptrdiff_t>(options.temporal_radius);
  const double inv = 1.0 / (2.0 * options.sigma * options.sigma);
  const auto at = [&](std::ptrdiff_t t, std::ptrdiff_t i, std::ptrdiff_t j) {
    return static_cast<std::size_t>((t * h + i) * w + j);
  };

  Grid3 out = g;
  for (std::ptrdiff_t t = 0; t < t_len; ++t) {
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        if (g.land[static_cast<std::size_t>(i * w + j)] || !std::isnan(g.frames[at(t, i, j)])) continue;
        double num = 0.0, den = 0.0;
        for (std::ptrdiff_t s = std::max<std::ptrdiff_t>(0, t - rt); s <= std::min(t_len - 1, t + rt); ++s) {
          const double dt = options.time_scale * static_cast<double>(s - t);
          for (std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, i - rs); a <= std::min(h - 1, i + rs); ++a) {
            for (std::ptrdiff_t b = std::max<std::ptrdiff_t>(0, j - rs); b <= std::min(w - 1, j + rs); ++b) {
              const float v = g.frames[at(s, a, b)];
              if (std::isnan(v) || g.land[static_cast<std::size_t>(a * w + b)]) continue;
              const double di = static_cast<double>(a - i), dj = static_cast<double>(b - j);
              const double weight = std::exp(-(di * di + dj * dj + dt * dt) * inv);
              num += weight * v;
              den += weight;
            }
          }
        }
        if (den <= 0.0) {
          throw DataError("st_idw_fill: no valid neighbour for pixel (" + std::to_string(t) + "," +
                          std::to_string(i) + "," + std::to_string(j) + ")");
        }
        out.frames[at(t, i, j)] = static_cast<float>(num / den);
      }
    }
  }
  return out;
}

Grid3 preprocess(const Grid3& g, const PreprocessOptions& options) {
  Grid3 out = detect_land(fill_missing_dates(g), options.land_threshold);
  if (options.idw) out = st_idw_fill(out, *options.idw);
  const std::size_t n = out.pixels();
  std::size_t remaining = 0;
  for (std::size_t t = 0; t < out.time(); ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      float& v = out.frames[t * n + p];
      if (out.land[p]) v = 0.0f;
      else if (std::isnan(v)) ++remaining;
    }
  }
  if (remaining > 0) {
    throw DataError("preprocess: " + std::to_string(remaining) + " missing ocean values remain");
  }
  return out;
}

std::size_t window_count(std::size_t t, std::size_t in_len, std::size_t out_len, std::size_t stride) {
  if (stride == 0 || in_len == 0 || out_len == 0) {
    throw ShapeError("windows: lengths and stride must be positive");
  }
  if (t < in_len + out_len) {
    throw DataError("windows: series of " + std::to_string(t) + " frames is shorter than " +
                    std::to_string(in_len) + "+" + std::to_string(out_len));
  }
  return (t - in_len - out_len) / stride + 1;
}

std::vector<SampleWindow> windows(const Grid3& g, std::size_t in_len, std::size_t out_len,
                                  std::size_t stride) {
  g.validate();
  const std::size_t count = window_count(g.time(), in_len, out_len, stride);
  const std::size_t h = g.height(), w = g.width(), n = g.pixels();
  std::vector<SampleWindow> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * stride;
    SampleWindow s;
    s.input = Tensor({in_len, 1, h, w});
    s.target = Tensor({out_len, 1, h, w});
    std::copy_n(g.frames.data() + start * n, in_len * n, s.input.data());
    std::copy_n(g.frames.data() + (start + in_len) * n, out_len * n, s.target.data());
    s.anchor = g.dates[start + in_len];
    out.push_back(std::move(s));
  }
  return out;
}

Grid3 slice_frames(const Grid3& g, std::size_t begin, std::size_t end) {
  g.validate();
  if (begin > end || end > g.time()) throw ShapeError("slice_frames: range out of bounds");
  const std::size_t n = g.pixels();
  Grid3 out;
  out.frames = Tensor({end - begin, g.height(), g.width()});
  std::copy_n(g.frames.data() + begin * n, (end - begin) * n, out.frames.data());
  out.dates.assign(g.dates.begin() + static_cast<std::ptrdiff_t>(begin),
                   g.dates.begin() + static_cast<std::ptrdiff_t>(end));
  out.land = g.land;
  return out;
}

Split split_chronological(const Grid3& g, double train_fraction, double val_fraction,
                          std::size_t min_len) {
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || train_fraction + val_fraction >= 1.0) {
    throw ShapeError("split_chronological: need positive fractions summing below 1");
  }
  const double t = static_cast<double>(g.time());
  const auto a = static_cast<std::size_t>(std::floor(train_fraction * t + 1e-9));
  const auto b = static_cast<std::size_t>(std::floor((train_fraction + val_fraction) * t + 1e-9));
  if (a < min_len || b - a < min_len || g.time() - b < min_len) {
    throw DataError("split_chronological: " + std::to_string(g.time()) +
                    " frames leave a block shorter than " + std::to_string(min_len));
  }
  return {slice_frames(g, 0, a), slice_frames(g, a, b), slice_frames(g, b, g.time())};
}

Grid3 synth_generate(const SynthOptions& o) {
  if (o.h < 8 || o.w < 8 || o.t < 1) throw ShapeError("synth_generate: need H,W >= 8 and T >= 1");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hh = static_cast<double>(o.h), ww = static_cast<double>(o.w);

  struct Blob {
    double ci, cj, vi, vj, radius, amplitude;
  };
  std::vector<Blob> blobs(o.n_blobs);
  for (Blob& b : blobs) {
    b.ci = unit(rng) * hh;
    b.cj = unit(rng) * ww;
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    const double speed = o.drift * (0.5 + 0.5 * unit(rng));
    b.vi = speed * std::sin(angle);
    b.vj = speed * std::cos(angle);
    b.radius = std::min(hh, ww) * (0.08 + 0.10 * unit(rng));
    b.amplitude = 0.5 + 0.4 * unit(rng);
  }
  const double phase = 2.0 * std::numbers::pi * unit(rng);

  Grid3 g = make_grid(o.t, o.h, o.w, 0.0f, o.start_date);
  if (o.land) {
    for (std::size_t i = o.h - o.h / 4; i < o.h; ++i)
      for (std::size_t j = 0; j < o.w / 4; ++j) g.land[i * o.w + j] = 1;
  }
  const auto wrap = [](double d, double period) {
    d = std::fmod(d, period);
    if (d < 0) d += period;
    return std::min(d, period - d);
  };
  const std::size_t n = g.pixels();
  for (std::size_t t = 0; t < o.t; ++t) {
    const double td = static_cast<double>(t);
    const double season =
        1.0 + o.season_amplitude * std::sin(2.0 * std::numbers::pi * td / o.season_period + phase);
    for (std::size_t i = 0; i < o.h; ++i) {
      for (std::size_t j = 0; j < o.w; ++j) {
        double sum = 0.0;
        for (const Blob& b : blobs) {
          const double di = wrap(static_cast<double>(i) - (b.ci + b.vi * td), hh);
          const double dj = wrap(static_cast<double>(j) - (b.cj + b.vj * td), ww);
          sum += b.amplitude * std::exp(-(di * di + dj * dj) / (2.0 * b.radius * b.radius));
        }
        g.frames[t * n + i * o.w + j] = static_cast<float>(std::clamp(season * sum, 0.0, 1.0));
      }
    }
  }
  for (std::size_t t = 0; t < o.t; ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      if (g.land[p]) g.frames[t * n + p] = kNaN;
      else if (o.missing_fraction > 0.0 && unit(rng) < o.missing_fraction) g.frames[t * n + p] = kNaN;
    }
  }
  return g;
}

void write_grid(const Grid3& g, const std::filesystem::path& path) {
  g.validate();
  const std::size_t n = g.pixels();
  if (g.time() > UINT32_MAX || g.height() > UINT32_MAX || g.width() > UINT32_MAX) {
    throw FormatError("grid: dimensions exceed the container limits");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("grid: cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.time()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.height()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.width()));
  for (std::int64_t d : g.dates) io::put_le<std::int64_t>(out, d);
  const auto land = pack_bits(g.land);
  out.write(reinterpret_cast<const char*>(land.data()), static_cast<std::streamsize>(land.size()));
  std::vector<std::uint8_t> missing(n);
  for (std::size_t t = 0; t < g.time(); ++t) {
    for (std::size_t p = 0; p < n; ++p) missing[p] = std::isnan(g.frames[t * n + p]) ? 1 : 0;
    const auto bits = pack_bits(missing);
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  }
  for (float v : g.frames.values()) io::put_le<float>(out, std::isnan(v) ? 0.0f : v);
  if (!out) throw FormatError("grid: write failed for " + path.string());
}

Grid3 read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("grid: cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic)) throw FormatError("grid: truncated");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("grid: bad magic in " + path.string());
  const std::uint64_t t = io::get_le<std::uint32_t>(in, "grid");
  const std::uint64_t h = io::get_le<std::uint32_t>(in, "grid");
  const std::uint64_t w = io::get_le<std::uint32_t>(in, "grid");

  // Every value costs 4 bytes, so anything the stream cannot hold is rejected
  // before allocating.
  const std::streampos body = in.tellg();
  in.seekg(0, std::ios::end);
  const std::uint64_t remaining = static_cast<std::uint64_t>(in.tellg() - body);
  in.seekg(body);
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 40;
  if (h != 0 && w > kLimit / h) throw FormatError("grid: dimensions overflow");
  const std::uint64_t n = h * w;
  if (n != 0 && t > kLimit / n) throw FormatError("grid: dimensions overflow");
  const std::uint64_t bitmap = (n + 7) / 8;
  const std::uint64_t expected = 8 * t + bitmap * (t + 1) + 4 * t * n;
  if (remaining < expected) throw FormatError("grid: truncated");
  if (remaining > expected) throw FormatError("grid: trailing bytes after payload");

  Grid3 g;
  g.dates.resize(t);
  for (auto& d : g.dates) d = io::get_le<std::int64_t>(in, "grid");
  std::vector<std::uint8_t> land(bitmap);
  in.read(reinterpret_cast<char*>(land.data()), static_cast<std::streamsize>(bitmap));
  g.land.resize(n);
  for (std::size_t p = 0; p < n; ++p) g.land[p] = bit(land, p) ? 1 : 0;
  std::vector<std::vector<std::uint8_t>> missing(t, std::vector<std::uint8_t>(bitmap));
  for (auto& m : missing) in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bitmap));
  if (!in) throw FormatError("grid: truncated");
  g.frames = Tensor({t, h, w});
  for (std::size_t k = 0; k < t * n; ++k) {
    const float v = io::get_le<float>(in, "grid");
    g.frames[k] = bit(missing[k / n], k % n) ? kNaN : v;
  }
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("grid: ") + e.what());
  }
  return g;
}

}  // namespace icessm::data
