#include "icessm/sfc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "icessm/error.hpp"

namespace icessm::sfc {

namespace {

void require_positive(const Dims& dims, const char* who) {
  if (dims.t == 0 || dims.h == 0 || dims.w == 0) {
    throw ShapeError(std::string(who) + ": zero dimension in " + to_string(dims));
  }
  if (dims.count() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError(std::string(who) + ": cuboid too large " + to_string(dims));
  }
}

// ---------------------------------------------------------------------------
// Generalized Hilbert (gilbert) recursion.
//
// generate() walks a box spanned by axis-aligned vectors a (major), b, c from
// corner p and must finish at p + (|a|-1)*unit(a). That endpoint is reachable by
// a unit-step Hamiltonian path iff |a| is even, or every side is odd and |a| >= 3,
// or the box is a single voxel. Splits whose sub-boxes violate this are rejected;
// if no split qualifies the box is filled by a serpentine instead.

struct Vec3 {
  long x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(long k) const { return {x * k, y * k, z * k}; }
  Vec3 half() const { return {x / 2, y / 2, z / 2}; }
  long length() const { return std::labs(x + y + z); }
  Vec3 unit() const {
    auto sgn = [](long v) { return long{(v > 0) - (v < 0)}; };
    return {sgn(x), sgn(y), sgn(z)};
  }
};

struct Box {
  Vec3 p, a, b, c;
};

bool reachable(long w, long h, long d) {
  if (w <= 0 || h <= 0 || d <= 0) return false;
  if (w * h * d == 1) return true;
  if (w % 2 == 0) return true;
  return w >= 3 && h % 2 == 1 && d % 2 == 1;
}

bool reachable(const Box& box) { return reachable(box.a.length(), box.b.length(), box.c.length()); }

class GilbertWalker {
 public:
  explicit GilbertWalker(const Dims& dims) : dims_(dims) { out_.reserve(dims.count()); }

  void generate(const Box& box) {
    const long w = box.a.length();
    const long h = box.b.length();
    const long d = box.c.length();
    const Vec3 da = box.a.unit();

    if (h == 1 && d == 1) {
      for (long i = 0; i < w; ++i) emit(box.p + da * i);
      return;
    }

    Vec3 a2 = box.a.half();
    Vec3 b2 = box.b.half();
    Vec3 c2 = box.c.half();
    // prefer even first halves
    if (a2.length() % 2 == 1 && w > 2) a2 = a2 + da;
    if (b2.length() % 2 == 1 && h > 2) b2 = b2 + box.b.unit();
    if (c2.length() % 2 == 1 && d > 2) c2 = c2 + box.c.unit();

    int preferred = 3;
    if (2 * w > 3 * h && 2 * w > 3 * d) {
      preferred = 0;
    } else if (3 * h > 4 * d) {
      preferred = 1;
    } else if (3 * d > 4 * h) {
      preferred = 2;
    }
    const int candidates[4] = {preferred, 3, 1, 2};
    for (int split : candidates) {
      std::vector<Box> parts = split_box(box, split, a2, b2, c2);
      if (!parts.empty() && std::all_of(parts.begin(), parts.end(),
                                        [](const Box& part) { return reachable(part); })) {
        for (const Box& part : parts) generate(part);
        return;
      }
    }
    serpentine(box);
  }

  std::vector<std::uint32_t> take() { return std::move(out_); }

 private:
  static std::vector<Box> split_box(const Box& box, int split, const Vec3& a2, const Vec3& b2,
                                    const Vec3& c2) {
    const Vec3& p = box.p;
    const Vec3& a = box.a;
    const Vec3& b = box.b;
    const Vec3& c = box.c;
    const Vec3 da = a.unit();
    const Vec3 db = b.unit();
    const Vec3 dc = c.unit();
    switch (split) {
      case 0:  // major axis only
        return {{p, a2, b, c}, {p + a2, a - a2, b, c}};
      case 1:  // a and b
        return {{p, b2, c, a2},
                {p + b2, a, b - b2, c},
                {p + (a - da) + (b2 - db), -b2, c, -(a - a2)}};
      case 2:  // a and c
        return {{p, c2, a2, b},
                {p + c2, a, b, c - c2},
                {p + (a - da) + (c2 - dc), -c2, -(a - a2), b}};
      default:  // all three axes
        return {{p, b2, c2, a2},
                {p + b2, c, a2, b - b2},
                {p + (b2 - db) + (c - dc), a, -b2, -(c - c2)},
                {p + (a - da) + b2 + (c - dc), -c, -(a - a2), b - b2},
                {p + (a - da) + (b2 - db), -b2, c2, -(a - a2)}};
    }
  }

  // Boustrophedon fill honouring the endpoint contract.
  void serpentine(const Box& box) {
    const long w = box.a.length();
    const long h = box.b.length();
    const long d = box.c.length();
    const Vec3 da = box.a.unit();
    const Vec3 db = box.b.unit();
    const Vec3 dc = box.c.unit();

    // (b,c) plane in boustrophedon order, starting at (0,0).
    std::vector<Vec3> plane;
    plane.reserve(static_cast<std::size_t>(h * d));
    for (long j = 0; j < d; ++j) {
      for (long k = 0; k < h; ++k) {
        const long kk = (j % 2 == 0) ? k : h - 1 - k;
        plane.push_back(db * kk + dc * j);
      }
    }

    if (w % 2 == 0) {
      for (long i = 0; i < w; ++i) {
        for (std::size_t m = 0; m < plane.size(); ++m) {
          const Vec3& q = (i % 2 == 0) ? plane[m] : plane[plane.size() - 1 - m];
          emit(box.p + da * i + q);
        }
      }
      return;
    }
    // All sides odd: cover slice 0 (ending at the far (b,c) corner), then walk the
    // plane backwards, sweeping each a-column over slices 1..w-1.
    for (const Vec3& q : plane) emit(box.p + q);
    for (std::size_t m = 0; m < plane.size(); ++m) {
      const Vec3& q = plane[plane.size() - 1 - m];
      for (long i = 1; i < w; ++i) {
        const long ii = (m % 2 == 0) ? i : w - i;
        emit(box.p + da * ii + q);
      }
    }
  }

  void emit(const Vec3& v) {
    out_.push_back(static_cast<std::uint32_t>(
        dims_.linear(static_cast<std::size_t>(v.x), static_cast<std::size_t>(v.y),
                     static_cast<std::size_t>(v.z))));
  }

  Dims dims_;
  std::vector<std::uint32_t> out_;
};

std::size_t axis_size(const Dims& dims, Axis axis) {
  switch (axis) {
    case Axis::t: return dims.t;
    case Axis::h: return dims.h;
    default: return dims.w;
  }
}

Vec3 axis_vector(const Dims& dims, Axis axis) {
  const long n = static_cast<long>(axis_size(dims, axis));
  switch (axis) {
    case Axis::t: return {n, 0, 0};
    case Axis::h: return {0, n, 0};
    default: return {0, 0, n};
  }
}

unsigned bits_for(std::size_t n) {
  unsigned bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  return bits;
}

}  // namespace

std::string to_string(const Dims& dims) {
  return "(" + std::to_string(dims.t) + "," + std::to_string(dims.h) + "," +
         std::to_string(dims.w) + ")";
}

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::raster: return "raster";
    case Kind::zorder: return "zorder";
    case Kind::peano: return "peano";
    case Kind::hilbert_spatial_first: return "hilbert-s";
    case Kind::hilbert_temporal_first: return "hilbert-t";
  }
  return "?";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : {Kind::raster, Kind::zorder, Kind::peano, Kind::hilbert_spatial_first,
                 Kind::hilbert_temporal_first}) {
    if (kind_name(k) == name) return k;
  }
  throw ShapeError("unknown scan kind '" + std::string(name) + "'");
}

bool is_hilbert(Kind kind) {
  return kind == Kind::hilbert_spatial_first || kind == Kind::hilbert_temporal_first;
}

std::string_view direction_name(Direction direction) {
  return direction == Direction::forward ? "forward" : "backward";
}

ScanOrder::ScanOrder(Dims dims, Kind kind, std::vector<std::uint32_t> forward,
                     Direction direction)
    : dims_(dims), kind_(kind), direction_(direction), sequence_(std::move(forward)) {
  const std::size_t n = dims_.count();
  if (sequence_.size() != n) {
    throw ShapeError("scan order: " + std::to_string(sequence_.size()) + " entries for " +
                     to_string(dims_));
  }
  constexpr auto kUnset = std::numeric_limits<std::uint32_t>::max();
  position_.assign(n, kUnset);
  if (direction_ == Direction::backward) std::reverse(sequence_.begin(), sequence_.end());
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t v = sequence_[i];
    if (v >= n || position_[v] != kUnset) {
      throw ShapeError("scan order: not a permutation (entry " + std::to_string(i) + ")");
    }
    position_[v] = static_cast<std::uint32_t>(i);
  }
}

ScanOrder::ScanOrder(Dims dims, Kind kind, Direction direction,
                     std::vector<std::uint32_t> sequence, std::vector<std::uint32_t> position)
    : dims_(dims),
      kind_(kind),
      direction_(direction),
      sequence_(std::move(sequence)),
      position_(std::move(position)) {}

std::vector<std::uint32_t> ScanOrder::forward() const {
  std::vector<std::uint32_t> out = sequence_;
  if (direction_ == Direction::backward) std::reverse(out.begin(), out.end());
  return out;
}

ScanOrder ScanOrder::reversed() const {
  std::vector<std::uint32_t> seq(sequence_.rbegin(), sequence_.rend());
  std::vector<std::uint32_t> pos(position_.size());
  const auto last = static_cast<std::uint32_t>(sequence_.size() - 1);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = last - position_[i];
  const Direction flipped =
      direction_ == Direction::forward ? Direction::backward : Direction::forward;
  return ScanOrder(dims_, kind_, flipped, std::move(seq), std::move(pos));
}

ScanOrder gilbert3d(const Dims& dims, const AxisPriority& priority) {
  require_positive(dims, "gilbert3d");
  std::array<Axis, 3> axes = priority;
  {
    std::array<bool, 3> seen{};
    for (Axis ax : axes) seen[static_cast<int>(ax)] = true;
    if (!(seen[0] && seen[1] && seen[2])) throw ShapeError("gilbert3d: axis priority must be a permutation");
  }
  // Pick the first axis (by priority) from which a corner-to-corner walk exists.
  for (std::size_t i = 0; i < 3; ++i) {
    const long w = static_cast<long>(axis_size(dims, axes[i]));
    const long h = static_cast<long>(axis_size(dims, axes[(i + 1) % 3]));
    const long d = static_cast<long>(axis_size(dims, axes[(i + 2) % 3]));
    if (reachable(w, h, d)) {
      Axis major = axes[i];
      std::array<Axis, 2> rest{};
      std::size_t r = 0;
      for (Axis ax : axes) {
        if (ax != major) rest[r++] = ax;
      }
      axes = {major, rest[0], rest[1]};
      break;
    }
  }
  GilbertWalker walker(dims);
  walker.generate(Box{{0, 0, 0},
                      axis_vector(dims, axes[0]),
                      axis_vector(dims, axes[1]),
                      axis_vector(dims, axes[2])});
  const Kind kind = priority[0] == Axis::t ? Kind::hilbert_temporal_first
                                            : Kind::hilbert_spatial_first;
  return ScanOrder(dims, kind, walker.take());
}

ScanOrder raster(const Dims& dims) {
  require_positive(dims, "raster");
  std::vector<std::uint32_t> seq(dims.count());
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = static_cast<std::uint32_t>(i);
  return ScanOrder(dims, Kind::raster, std::move(seq));
}

ScanOrder zorder(const Dims& dims) {
  require_positive(dims, "zorder");
  const std::array<unsigned, 3> bits{bits_for(dims.t), bits_for(dims.h), bits_for(dims.w)};
  const unsigned total = bits[0] + bits[1] + bits[2];
  if (total >= 40) throw ShapeError("zorder: cuboid too large " + to_string(dims));
  std::vector<std::uint32_t> seq;
  seq.reserve(dims.count());
  const std::uint64_t codes = std::uint64_t{1} << total;
  for (std::uint64_t code = 0; code < codes; ++code) {
    std::array<std::size_t, 3> coord{};
    unsigned k = 0;
    const unsigned levels = std::max({bits[0], bits[1], bits[2]});
    for (unsigned level = 0; level < levels; ++level) {
      // w takes the least significant bit of each level, then h, then t
      for (int axis = 2; axis >= 0; --axis) {
        if (level < bits[axis]) {
          coord[axis] |= static_cast<std::size_t>((code >> k) & 1u) << level;
          ++k;
        }
      }
    }
    if (coord[0] < dims.t && coord[1] < dims.h && coord[2] < dims.w) {
      seq.push_back(static_cast<std::uint32_t>(dims.linear(coord[0], coord[1], coord[2])));
    }
  }
  return ScanOrder(dims, Kind::zorder, std::move(seq));
}

ScanOrder peano(const Dims& dims) {
  require_positive(dims, "peano");
  unsigned levels = 0;
  std::size_t side = 1;
  while (side < std::max({dims.t, dims.h, dims.w})) {
    side *= 3;
    ++levels;
  }
  const std::size_t cells = side * side * side;
  if (cells > (std::size_t{1} << 31)) throw ShapeError("peano: cuboid too large " + to_string(dims));
  const unsigned ndigits = 3 * levels;
  std::vector<unsigned> digits(ndigits);
  std::vector<std::uint32_t> seq;
  seq.reserve(dims.count());
  for (std::size_t index = 0; index < cells; ++index) {
    std::size_t rem = index;
    for (unsigned m = ndigits; m-- > 0;) {
      digits[m] = static_cast<unsigned>(rem % 3);
      rem /= 3;
    }
    // Digit m (most significant first) belongs to axis m % 3 in (t,h,w) order and
    // is mirrored when the preceding digits of the other axes have an odd sum.
    std::array<std::size_t, 3> coord{};
    std::array<unsigned, 3> axis_digit_sum{};
    unsigned total_sum = 0;
    for (unsigned m = 0; m < ndigits; ++m) {
      const unsigned axis = m % 3;
      const unsigned others = total_sum - axis_digit_sum[axis];
      const unsigned v = (others % 2 == 0) ? digits[m] : 2 - digits[m];
      coord[axis] = coord[axis] * 3 + v;
      axis_digit_sum[axis] += digits[m];
      total_sum += digits[m];
    }
    if (coord[0] < dims.t && coord[1] < dims.h && coord[2] < dims.w) {
      seq.push_back(static_cast<std::uint32_t>(dims.linear(coord[0], coord[1], coord[2])));
    }
  }
  return ScanOrder(dims, Kind::peano, std::move(seq));
}

ScanOrder make_order(Kind kind, const Dims& dims) {
  switch (kind) {
    case Kind::raster: return raster(dims);
    case Kind::zorder: return zorder(dims);
    case Kind::peano: return peano(dims);
    case Kind::hilbert_spatial_first: return gilbert3d(dims, kSpatialFirst);
    case Kind::hilbert_temporal_first: return gilbert3d(dims, kTemporalFirst);
  }
  throw ShapeError("make_order: unknown kind");
}

std::vector<ScanOrder> routes(const ScanOrder& order, int n_routes) {
  if (n_routes != 1 && n_routes != 2 && n_routes != 4) {
    throw ShapeError("routes: n_routes must be 1, 2 or 4 (got " + std::to_string(n_routes) + ")");
  }
  const ScanOrder base(order.dims(), order.kind(), order.forward());
  std::vector<ScanOrder> out{base};
  if (n_routes >= 2) out.push_back(base.reversed());
  if (n_routes == 4) {
    // Rotated cell (t, r, s) on a (T, W, H) grid is original (t, H-1-s, r).
    const Dims& d = order.dims();
    const Dims rotated{d.t, d.w, d.h};
    const ScanOrder rot = make_order(order.kind(), rotated);
    std::vector<std::uint32_t> mapped(rot.size());
    for (std::size_t i = 0; i < rot.size(); ++i) {
      std::size_t li = rot.sequence()[i];
      const std::size_t s = li % rotated.w;
      li /= rotated.w;
      const std::size_t r = li % rotated.h;
      const std::size_t t = li / rotated.h;
      mapped[i] = static_cast<std::uint32_t>(d.linear(t, d.h - 1 - s, r));
    }
    ScanOrder rotated_forward(d, order.kind(), std::move(mapped));
    out.push_back(rotated_forward);
    out.push_back(rotated_forward.reversed());
  }
  return out;
}

nd::Tensor apply(const ScanOrder& order, const nd::Tensor& volume) {
  const Dims& d = order.dims();
  if (volume.rank() != 4 || volume.dim(0) != d.t || volume.dim(2) != d.h || volume.dim(3) != d.w) {
    throw ShapeError("scan apply: volume " + nd::to_string(volume.shape()) +
                     " does not match order dims " + to_string(d));
  }
  const std::size_t channels = volume.dim(1);
  const std::size_t plane = d.h * d.w;
  nd::Tensor seq({order.size(), channels});
  for (std::size_t p = 0; p < order.size(); ++p) {
    const std::size_t li = order.sequence()[p];
    const std::size_t t = li / plane;
    const std::size_t hw = li % plane;
    for (std::size_t c = 0; c < channels; ++c) {
      seq[p * channels + c] = volume[(t * channels + c) * plane + hw];
    }
  }
  return seq;
}

nd::Tensor inverse_apply(const ScanOrder& order, const nd::Tensor& sequence) {
  const Dims& d = order.dims();
  if (sequence.rank() != 2 || sequence.dim(0) != order.size()) {
    throw ShapeError("scan inverse_apply: sequence " + nd::to_string(sequence.shape()) +
                     " does not match order dims " + to_string(d));
  }
  const std::size_t channels = sequence.dim(1);
  const std::size_t plane = d.h * d.w;
  nd::Tensor volume({d.t, channels, d.h, d.w});
  for (std::size_t p = 0; p < order.size(); ++p) {
    const std::size_t li = order.sequence()[p];
    const std::size_t t = li / plane;
    const std::size_t hw = li % plane;
    for (std::size_t c = 0; c < channels; ++c) {
      volume[(t * channels + c) * plane + hw] = sequence[p * channels + c];
    }
  }
  return volume;
}

LocalityScore locality_score(const ScanOrder& order) {
  const Dims& d = order.dims();
  const std::array<std::size_t, 3> stride{d.h * d.w, d.w, 1};
  const std::array<std::size_t, 3> extent{d.t, d.h, d.w};
  LocalityScore score;
  std::array<double, 3> sums{};
  std::array<std::uint64_t, 3> counts{};
  double total = 0.0;
  double log_total = 0.0;
  std::vector<std::uint64_t> gaps;
  gaps.reserve(3 * d.count());
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        const std::array<std::size_t, 3> coord{t, h, w};
        const std::size_t li = d.linear(t, h, w);
        for (std::size_t axis = 0; axis < 3; ++axis) {
          if (coord[axis] + 1 >= extent[axis]) continue;
          const auto a = static_cast<std::int64_t>(order.position(li));
          const auto b = static_cast<std::int64_t>(order.position(li + stride[axis]));
          const auto gap = static_cast<std::uint64_t>(std::llabs(a - b));
          sums[axis] += static_cast<double>(gap);
          counts[axis] += 1;
          total += static_cast<double>(gap);
          log_total += std::log(static_cast<double>(gap));
          gaps.push_back(gap);
          score.max_gap = std::max(score.max_gap, gap);
        }
      }
    }
  }
  score.pairs = counts[0] + counts[1] + counts[2];
  for (std::size_t axis = 0; axis < 3; ++axis) {
    score.axis_mean_gap[axis] = counts[axis] ? sums[axis] / static_cast<double>(counts[axis]) : 0.0;
  }
  if (score.pairs == 0) return score;
  const double n = static_cast<double>(score.pairs);
  score.mean_gap = total / n;
  score.geometric_mean_gap = std::exp(log_total / n);
  const std::size_t mid = gaps.size() / 2;
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(mid), gaps.end());
  double median = static_cast<double>(gaps[mid]);
  if (gaps.size() % 2 == 0) {
    const auto lower = *std::max_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + static_cast<double>(lower));
  }
  score.median_gap = median;
  return score;
}

void write_golden(std::ostream& out, const ScanOrder& order) {
  const Dims& d = order.dims();
  out << kind_name(order.kind()) << ' ' << d.t << ' ' << d.h << ' ' << d.w << ' '
      << direction_name(order.direction()) << '\n';
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) out << ' ';
    out << order.sequence()[i];
  }
  out << '\n';
}

ScanOrder read_golden(std::istream& in) {
  std::string kind;
  std::string direction;
  Dims dims;
  if (!(in >> kind >> dims.t >> dims.h >> dims.w >> direction)) {
    throw FormatError("golden scan file: bad header");
  }
  if (direction != "forward" && direction != "backward") {
    throw FormatError("golden scan file: bad direction '" + direction + "'");
  }
  if (dims.t == 0 || dims.h == 0 || dims.w == 0 ||
      dims.count() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("golden scan file: bad dims");
  }
  std::vector<std::uint32_t> seq(dims.count());
  for (auto& v : seq) {
    if (!(in >> v)) throw FormatError("golden scan file: truncated index list");
  }
  const Direction dir = direction == "forward" ? Direction::forward : Direction::backward;
  if (dir == Direction::backward) std::reverse(seq.begin(), seq.end());
  try {
    return ScanOrder(dims, parse_kind(kind), std::move(seq), dir);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("golden scan file: ") + e.what());
  }
}

}  // namespace icessm::sfc
