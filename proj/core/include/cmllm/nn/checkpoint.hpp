#pragma once

// Binary checkpoint container:
//   magic "CMLLMCKP" | u32 format version | u64 header length | JSON header
//   | u64 array count | per array: u32 name length, name, u8 dtype,
//     u32 rank, u64 dims..., raw little-endian data.
// Loaders reject any version other than kCheckpointVersion.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/nn/parameters.hpp"

namespace cmllm::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedArray {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  std::vector<double> as_double() const;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t);

/// Every parameter of the store as an array (frozen ones included).
template <typename T>
std::vector<NamedArray> export_parameters(const ParameterStore<T>& store);

/// Overwrites store values by name. Missing names or shape disagreements
/// raise CompatibilityError.
template <typename T>
void import_parameters(ParameterStore<T>& store, const Checkpoint& ckpt);

}  // namespace cmllm::nn
