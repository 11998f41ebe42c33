#include "dla/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace dla {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  values.assign(n, fill);
}

const Tensor& ModelParameters::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ModelParameters::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParameters::total_size() const {
  std::size_t n = 0;
  for (const auto& [k, t] : tensors_) n += t.numel();
  return n;
}

bool ModelParameters::same_schema(const ModelParameters& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto a = tensors_.begin();
  auto b = other.tensors_.begin();
  for (; a != tensors_.end(); ++a, ++b)
    if (a->first != b->first || a->second.shape != b->second.shape) return false;
  return true;
}

void ModelParameters::require_same_schema(const ModelParameters& other, const char* what) const {
  if (!same_schema(other)) throw ContractViolation(std::string(what) + ": parameter schema mismatch");
}

ModelParameters ModelParameters::zeros_like() const {
  Map out;
  for (const auto& [k, t] : tensors_) out.emplace(k, Tensor(t.shape));
  return ModelParameters(std::move(out));
}

bool ModelParameters::all_finite() const {
  for (const auto& [k, t] : tensors_)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

void axpy(ModelParameters& dst, const ModelParameters& src, double scale) {
  dst.require_same_schema(src, "axpy");
  auto d = dst.tensors().begin();
  for (auto s = src.tensors().begin(); s != src.tensors().end(); ++s, ++d) {
    auto& dv = d->second.values;
    const auto& sv = s->second.values;
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += scale * sv[i];
  }
}

double squared_norm(const ModelParameters& p) {
  double s = 0.0;
  for (const auto& [k, t] : p.tensors())
    for (double v : t.values) s += v * v;
  return s;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t Checkpoint::config_hash() const {
  return fnv1a(detector_config.data(), detector_config.size());
}

namespace {

constexpr char kMagic[8] = {'D', 'L', 'A', 'D', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t end) : buf_(b), end_(end) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw IncompatibleCheckpoint("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(Checkpoint::kVersion);
  w.pod(ckpt.iteration);
  w.pod(ckpt.epoch);
  w.pod(ckpt.config_hash());
  w.str(ckpt.detector_config);
  w.str(ckpt.taxonomy.name);
  w.pod(static_cast<std::uint32_t>(ckpt.taxonomy.categories.size()));
  for (const auto& c : ckpt.taxonomy.categories) w.str(c);
  w.pod(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(ckpt.params.tensors().size()));
  for (const auto& [name, t] : ckpt.params.tensors()) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.pod(static_cast<std::uint32_t>(d));
    w.raw(t.values.data(), t.values.size() * sizeof(double));
  }
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(sum);
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t))
    throw IncompatibleCheckpoint("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IncompatibleCheckpoint("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);

  Reader r(bytes, body);
  char magic[8];
  r.raw(magic, sizeof magic);
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw IncompatibleCheckpoint("checkpoint version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  if (fnv1a(bytes.data(), body) != stored)
    throw IncompatibleCheckpoint("checkpoint checksum mismatch (truncated or corrupt)");

  Checkpoint ckpt;
  ckpt.iteration = r.pod<std::uint64_t>();
  ckpt.epoch = r.pod<std::uint64_t>();
  const auto hash = r.pod<std::uint64_t>();
  ckpt.detector_config = r.str();
  if (hash != ckpt.config_hash()) throw IncompatibleCheckpoint("checkpoint config hash mismatch");
  ckpt.taxonomy.name = r.str();
  const auto ncat = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ncat; ++i) ckpt.taxonomy.categories.push_back(r.str());
  const auto nmeta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  const auto ntensor = r.pod<std::uint32_t>();
  ModelParameters::Map tensors;
  for (std::uint32_t i = 0; i < ntensor; ++i) {
    std::string name = r.str();
    const auto ndim = r.pod<std::uint32_t>();
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.pod<std::uint32_t>()));
    Tensor t(shape);
    r.raw(t.values.data(), t.values.size() * sizeof(double));
    tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw IncompatibleCheckpoint("trailing bytes in checkpoint");
  ckpt.params = ModelParameters(std::move(tensors));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace dla
