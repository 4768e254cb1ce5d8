#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icessm/nd/tape.hpp"
#include "icessm/nd/tensor.hpp"

namespace icessm::nd {

/// Ordered collection of named tensors (model weights, their gradients, or
/// optimizer moments). Insertion order is the checkpoint order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  std::size_t element_count() const;

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void set_zero();

  bool operator==(const ParamSet& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A ParamSet placed on a tape as leaves.
class Binding {
 public:
  Binding(Tape& tape, const ParamSet& params, bool requires_grad = true);
  /// Names `params` onto existing vars of `tape`, one per entry, in order.
  Binding(Tape& tape, const ParamSet& params, std::vector<Var> vars);

  Var operator[](std::string_view name) const;
  /// Adds this tape's gradients into `grads` (same layout as the bound set).
  void accumulate_into(ParamSet& grads) const;

 private:
  const Tape* tape_;
  const ParamSet* params_;
  std::vector<Var> vars_;
};

// Checkpoint layout (little-endian):
//   "ICKPT001", u64 count,
//   count x { u32 name_len, name bytes (UTF-8), u32 rank, rank x u64 dim },
//   then each tensor's float32 payload in header order.
void write_checkpoint(std::ostream& out, const ParamSet& params);
ParamSet read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace icessm::nd
