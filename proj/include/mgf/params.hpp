#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mgf/autograd.hpp"
#include "mgf/rng.hpp"

namespace mgf {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors plus their optimizer state. Names are unique; iteration
/// order is lexicographic so every traversal is deterministic.
class ParamStore {
 public:
  struct Slot {
    Var param;
    Tensor m;
    Tensor v;
    std::uint64_t step = 0;
  };

  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Registers a parameter; throws std::invalid_argument on a duplicate name.
  Var& add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return slots_.count(name) != 0; }
  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;
  const Slot& slot(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t size() const { return slots_.size(); }
  std::size_t parameter_count() const;

  void zero_grad();

  /// Bias-corrected adaptive-moment update. Throws std::logic_error when a parameter has
  /// no gradient (it was not reached by the last backward pass).
  void adam_step(const AdamOptions& opt);

  /// Copies values by name from another store; shapes must match.
  void load_values(const std::map<std::string, Tensor>& values);
  std::map<std::string, Tensor> values() const;

 private:
  std::map<std::string, Slot> slots_;
};

void adam_step(ParamStore& store, const AdamOptions& opt);

// "MGF1" weight files: magic, u64 count, then per tensor: u64 name length, UTF-8 name,
// u64 rank, rank x u64 extents, numel x f64 values. All little-endian.
void save_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path);

/// He-normal initialization for a conv/linear weight with the given fan-in.
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);
Tensor uniform_init(Shape shape, double bound, Rng& rng);

}  // namespace mgf
