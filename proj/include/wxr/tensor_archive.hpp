#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace wxr {

/// Raised for malformed archives and for name/shape validation failures.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered name -> tensor container persisted in the `.ntar` format.
///
/// Layout (all integers little-endian):
///   "NTAR" | u32 version=1 | u64 entry count
///   per entry: u32 name length | name bytes | u8 dtype | u32 ndim |
///              i64 dims[ndim] | raw contiguous data
/// dtype codes: 0 float32, 1 float64, 2 int64, 3 uint8.
class TensorArchive {
 public:
  void put(const std::string& name, const torch::Tensor& t);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  std::string get_text(const std::string& name) const;

  std::vector<std::string> names() const;
  /// Entries whose name starts with `prefix`, with the prefix stripped.
  std::map<std::string, torch::Tensor> with_prefix(const std::string& prefix) const;
  const std::map<std::string, torch::Tensor>& entries() const { return entries_; }

  /// Writes to a sibling temp file and renames over `path`.
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> entries_;
};

/// Archive naming for module parameters: "weight" -> "w", "bias" -> "b".
std::string archive_param_name(const std::string& torch_name);

/// Stores every named parameter of `module` under `prefix`.
void export_parameters(const torch::nn::Module& module, const std::string& prefix,
                       TensorArchive& archive);

/// Copies parameters from the archive into `module`. The set of names under
/// `prefix` must equal the module's parameter set exactly, and every shape must
/// match; the first offending tensor is named in the thrown ArchiveError.
void import_parameters(torch::nn::Module& module, const std::string& prefix,
                       const TensorArchive& archive);

}  // namespace wxr
