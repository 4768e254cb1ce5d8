#include "icessm/nd/params.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "icessm/error.hpp"
#include "icessm/le_io.hpp"

namespace icessm::nd {

using io::get_le;
using io::put_le;

Tensor& ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ShapeError("param set: duplicate name '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.back();
}

bool ParamSet::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ShapeError("param set: no parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamSet::at(std::string_view name) { return values_[index_of(name)]; }

const Tensor& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(values_[i].shape(), 0.0f));
  return out;
}

void ParamSet::set_zero() {
  for (Tensor& t : values_) t.fill(0.0f);
}

Binding::Binding(Tape& tape, const ParamSet& params, bool requires_grad)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.leaf(params[i], requires_grad));
}

Binding::Binding(Tape& tape, const ParamSet& params, std::vector<Var> vars)
    : tape_(&tape), params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size()) throw ShapeError("binding: var count differs from parameter count");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].tape != &tape || vars_[i].shape() != params[i].shape()) {
      throw ShapeError("binding: var for '" + params.name(i) + "' does not match");
    }
  }
}

Var Binding::operator[](std::string_view name) const {
  return vars_[params_->index_of(name)];
}

void Binding::accumulate_into(ParamSet& grads) const {
  if (grads.size() != vars_.size()) throw ShapeError("binding: gradient set size mismatch");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (!tape_->requires_grad(vars_[i])) continue;
    const Tensor g = tape_->grad(vars_[i]);
    Tensor& dst = grads[i];
    if (dst.size() != g.size()) throw ShapeError("binding: gradient shape mismatch");
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }
}

namespace {

constexpr std::array<char, 8> kMagic{'I', 'C', 'K', 'P', 'T', '0', '0', '1'};

}  // namespace

void write_checkpoint(std::ostream& out, const ParamSet& params) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& shape = params[i].shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_le<std::uint64_t>(out, d);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (float v : params[i].values()) put_le<float>(out, v);
  }
  if (!out) throw FormatError("checkpoint: write failed");
}

ParamSet read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto count = get_le<std::uint64_t>(in, "checkpoint");
  if (count > (1u << 20)) throw FormatError("checkpoint: implausible tensor count");
  std::vector<std::pair<std::string, Shape>> header;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in, "checkpoint");
    if (len > 4096) throw FormatError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in, "checkpoint");
    if (rank > 16) throw FormatError("checkpoint: implausible rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      const auto dim = get_le<std::uint64_t>(in, "checkpoint");
      if (dim != 0 && n > (std::size_t{1} << 34) / dim) throw FormatError("checkpoint: dims overflow");
      d = static_cast<std::size_t>(dim);
      n *= d;
    }
    header.emplace_back(std::move(name), std::move(shape));
  }
  ParamSet out;
  for (auto& [name, shape] : header) {
    std::vector<float> values(numel(shape));
    for (float& v : values) v = get_le<float>(in, "checkpoint");
    try {
      out.add(name, Tensor(shape, std::move(values)));
    } catch (const ShapeError& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path.string());
  write_checkpoint(out, params);
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace icessm::nd
