#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dla/errors.hpp"
#include "dla/labelspace.hpp"

namespace dla {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  std::size_t numel() const { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named detector weights. The name set is fixed once constructed; every
/// arithmetic helper below checks the schema of its operands.
class ModelParameters {
 public:
  using Map = std::map<std::string, Tensor>;

  ModelParameters() = default;
  explicit ModelParameters(Map tensors) : tensors_(std::move(tensors)) {}

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Map& tensors() const { return tensors_; }
  Map& tensors() { return tensors_; }
  std::size_t total_size() const;
  bool empty() const { return tensors_.empty(); }

  bool same_schema(const ModelParameters& other) const;
  /// Throws ContractViolation if the schemas differ.
  void require_same_schema(const ModelParameters& other, const char* what) const;
  /// Same schema, all zeros.
  ModelParameters zeros_like() const;
  bool all_finite() const;

  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;

 private:
  Map tensors_;
};

/// Deep copy. ModelParameters has value semantics so this is a plain copy,
/// named for the call sites that initialise teachers from a source model.
inline ModelParameters clone_params(const ModelParameters& p) { return p; }

/// Adds `scale * src` into `dst`.
void axpy(ModelParameters& dst, const ModelParameters& src, double scale);
double squared_norm(const ModelParameters& p);

struct IncompatibleCheckpoint : IoError {
  explicit IncompatibleCheckpoint(const std::string& w) : IoError(w) {}
};

/// Self-describing checkpoint container.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelParameters params;
  std::uint64_t iteration = 0;
  std::uint64_t epoch = 0;
  Taxonomy taxonomy;
  std::string detector_config;  // JSON text of the DetectorConfig
  std::map<std::string, std::string> meta;

  std::uint64_t config_hash() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary layout (little endian): magic "DLADCKPT", u32 version, u64
/// iteration, u64 epoch, u64 config hash, str config, str taxonomy name,
/// u32 n + str categories, u32 n + (str key, str value) meta, u32 n +
/// (str name, u32 ndim, u32 dims..., f64 values...) tensors, u64 FNV-1a of
/// all preceding bytes. Strings are u32 length + bytes.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace dla
