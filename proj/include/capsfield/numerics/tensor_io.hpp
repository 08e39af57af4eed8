#pragma once

#include <filesystem>
#include <iosfwd>

#include "capsfield/numerics/tensor.hpp"

namespace capsfield::numerics {

/// Binary tensor record:
///   magic "CFT1" (f32 payload) or "CFT2" (f64 payload), u32 rank,
///   rank x u32 dims, then the little-endian payload in row-major order.
/// CFT1 is the interchange format for views and exported embeddings;
/// CFT2 exists so checkpoints keep double-precision parameters exactly.
enum class StorageType { f32, f64 };

void write_tensor(std::ostream& out, const Tensor& tensor, StorageType type = StorageType::f32);
/// Throws FormatError on a bad magic, truncated header or truncated payload.
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor,
                 StorageType type = StorageType::f32);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace capsfield::numerics
