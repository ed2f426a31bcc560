#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "transfusion/tensor.hpp"

namespace transfusion::io {

// TFTN tensor record, little-endian:
//   "TFTN" | u32 version=1 | u32 rank | u32 extents[rank] | u8 dtype | payload
// dtype 0 = f32, 1 = f64; payload row-major.
inline constexpr char kTensorMagic[4] = {'T', 'F', 'T', 'N'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

DType parse_dtype(const std::string& name);
std::string dtype_name(DType dtype);

void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is, const char* what);
void write_bytes(std::ostream& os, const std::string& bytes);
std::string read_bytes(std::istream& is, std::size_t n, const char* what);

void write_tensor(std::ostream& os, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor load_tensor(const std::filesystem::path& path);

// Writes to a sibling temp file then renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace transfusion::io
