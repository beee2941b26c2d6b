#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cfn/tensor.hpp"

// Little-endian tagged container:
//
//   "CFN1" | u32 version | u32 count |
//   count x ( u32 name_len | name bytes | u8 dtype (0=f32, 1=f64) | u8 rank |
//             rank x u32 dims | row-major little-endian payload )
//
namespace cfn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyTensor = std::variant<TensorF, TensorD>;

struct CheckpointEntry {
  std::string name;
  AnyTensor tensor;
};

DType dtype(const AnyTensor& tensor);
const Shape& shape(const AnyTensor& tensor);

// Throws FormatError on duplicate names.
std::vector<std::uint8_t> checkpoint_save(std::span<const CheckpointEntry> entries);

// Throws FormatError on bad magic, unsupported version, truncated payload,
// unknown dtype or duplicate names.
std::vector<CheckpointEntry> checkpoint_load(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

// Entry lookup by name; throws FormatError if missing or of the wrong dtype.
template <typename T>
const Tensor<T>& find_tensor(std::span<const CheckpointEntry> entries, const std::string& name);

}  // namespace cfn
