#include "wxr/tensor_archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace wxr {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'T', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    default: throw ArchiveError("unsupported dtype for archive: " + std::string(c10::toString(t)));
  }
}

torch::ScalarType dtype_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    default: throw ArchiveError("unknown dtype code " + std::to_string(code));
  }
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ArchiveError("truncated archive");
  return v;
}

std::string shape_str(torch::IntArrayRef s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& t) {
  if (name.empty()) throw ArchiveError("empty tensor name");
  dtype_code(t.scalar_type());
  entries_[name] = t.detach().to(torch::kCPU).contiguous().clone();
}

void TensorArchive::put_text(const std::string& name, const std::string& text) {
  auto t = torch::empty({static_cast<int64_t>(text.size())}, torch::kUInt8);
  if (!text.empty()) std::memcpy(t.data_ptr(), text.data(), text.size());
  entries_[name] = t;
}

bool TensorArchive::contains(const std::string& name) const { return entries_.count(name) > 0; }

const torch::Tensor& TensorArchive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArchiveError("missing tensor '" + name + "'");
  return it->second;
}

std::string TensorArchive::get_text(const std::string& name) const {
  const auto& t = get(name);
  if (t.scalar_type() != torch::kUInt8) throw ArchiveError("entry '" + name + "' is not text");
  return std::string(static_cast<const char*>(t.data_ptr()), static_cast<size_t>(t.numel()));
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::map<std::string, torch::Tensor> TensorArchive::with_prefix(const std::string& prefix) const {
  std::map<std::string, torch::Tensor> out;
  for (auto it = entries_.lower_bound(prefix); it != entries_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.emplace(it->first.substr(prefix.size()), it->second);
  }
  return out;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ArchiveError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
      write_pod(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(os, dtype_code(t.scalar_type()));
      write_pod(os, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) write_pod(os, static_cast<std::int64_t>(d));
      os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    os.flush();
    if (!os) throw ArchiveError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open archive " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw ArchiveError(path.string() + " is not a tensor archive");
  if (auto v = read_pod<std::uint32_t>(is); v != kVersion)
    throw ArchiveError("unsupported archive version " + std::to_string(v));
  const auto count = read_pod<std::uint64_t>(is);
  TensorArchive ar;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto dtype = dtype_from_code(read_pod<std::uint8_t>(is));
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) {
      d = read_pod<std::int64_t>(is);
      if (d < 0) throw ArchiveError("negative dimension in '" + name + "'");
    }
    auto t = torch::empty(dims, dtype);
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!is) throw ArchiveError("truncated data for '" + name + "'");
    ar.entries_[name] = t;
  }
  return ar;
}

std::string archive_param_name(const std::string& torch_name) {
  auto dot = torch_name.rfind('.');
  std::string stem = dot == std::string::npos ? "" : torch_name.substr(0, dot + 1);
  std::string leaf = dot == std::string::npos ? torch_name : torch_name.substr(dot + 1);
  if (leaf == "weight") leaf = "w";
  else if (leaf == "bias") leaf = "b";
  return stem + leaf;
}

void export_parameters(const torch::nn::Module& module, const std::string& prefix,
                       TensorArchive& archive) {
  for (const auto& p : module.named_parameters(true)) {
    archive.put(prefix + archive_param_name(p.key()), p.value());
  }
}

void import_parameters(torch::nn::Module& module, const std::string& prefix,
                       const TensorArchive& archive) {
  auto stored = archive.with_prefix(prefix);
  std::set<std::string> expected;
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters(true)) {
    const auto name = archive_param_name(p.key());
    expected.insert(name);
    auto it = stored.find(name);
    if (it == stored.end()) throw ArchiveError("missing tensor '" + prefix + name + "'");
    if (it->second.sizes() != p.value().sizes()) {
      throw ArchiveError("shape mismatch for '" + prefix + name + "': archive " +
                         shape_str(it->second.sizes()) + " vs model " + shape_str(p.value().sizes()));
    }
    p.value().copy_(it->second.to(p.value().dtype()));
  }
  for (const auto& [name, t] : stored) {
    if (!expected.count(name)) throw ArchiveError("unexpected tensor '" + prefix + name + "'");
  }
}

}  // namespace wxr
