#include "mgf/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mgf {

static_assert(std::endian::native == std::endian::little, "MGF1 I/O assumes a little-endian host");

Var& ParamStore::add(const std::string& name, Tensor init) {
  if (slots_.count(name)) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
  Slot slot;
  slot.m = Tensor::like(init);
  slot.v = Tensor::like(init);
  slot.param = Var(std::move(init), true);
  return slots_.emplace(name, std::move(slot)).first->second.param;
}

Var& ParamStore::get(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("param store: no parameter '" + name + "'");
  return it->second.param;
}

const Var& ParamStore::get(const std::string& name) const { return slot(name).param; }

const ParamStore::Slot& ParamStore::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("param store: no parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, _] : slots_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, s] : slots_) n += s.param.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, s] : slots_) s.param.zero_grad();
}

void ParamStore::adam_step(const AdamOptions& opt) {
  for (const auto& [name, s] : slots_)
    if (!s.param.has_grad()) throw std::logic_error("adam_step: parameter '" + name + "' has no gradient");
  for (auto& [name, s] : slots_) {
    ++s.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(s.step));
    Tensor& w = s.param.mutable_value();
    const Tensor& g = s.param.grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      s.m[i] = opt.beta1 * s.m[i] + (1.0 - opt.beta1) * g[i];
      s.v[i] = opt.beta2 * s.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

void ParamStore::load_values(const std::map<std::string, Tensor>& values) {
  for (auto& [name, s] : slots_) {
    auto it = values.find(name);
    if (it == values.end()) throw std::invalid_argument("weights: missing tensor '" + name + "'");
    if (it->second.shape() != s.param.shape())
      throw std::invalid_argument("weights: tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                  ", expected " + shape_str(s.param.shape()));
    s.param.mutable_value() = it->second;
  }
}

std::map<std::string, Tensor> ParamStore::values() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, s] : slots_) out.emplace(name, s.param.value());
  return out;
}

void adam_step(ParamStore& store, const AdamOptions& opt) { store.adam_step(opt); }

namespace {

constexpr char kMagic[4] = {'M', 'G', 'F', '1'};

void put_u64(std::ofstream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& is, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error("weights: truncated file " + path.string());
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("weights: cannot write " + path.string());
  os.write(kMagic, 4);
  put_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, t.rank());
    for (std::size_t d : t.shape()) put_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("weights: write failed for " + path.string());
}

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weights: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("weights: " + path.string() + " is not an MGF1 file");
  const std::uint64_t count = get_u64(is, path);
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t len = get_u64(is, path);
    if (len > (1u << 20)) throw std::runtime_error("weights: implausible name length in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len)))
      throw std::runtime_error("weights: truncated file " + path.string());
    const std::uint64_t rank = get_u64(is, path);
    if (rank > 8) throw std::runtime_error("weights: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(is, path);
    std::vector<double> values(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw std::runtime_error("weights: truncated values for '" + name + "'");
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  for (double& v : t.data()) v = rng.normal(0.0, sigma);
  return t;
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace mgf
