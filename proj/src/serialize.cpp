#include "transfusion/serialize.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace transfusion::io {

namespace {

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <class U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw TruncatedError(std::string("unexpected end of data while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

std::string dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }

std::uint32_t read_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }

void write_bytes(std::ostream& os, const std::string& bytes) {
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string out(n, '\0');
  is.read(out.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw TruncatedError(std::string("unexpected end of data while reading ") + what);
  }
  return out;
}

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
  os.write(kTensorMagic, 4);
  write_u32(os, kTensorVersion);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u32(os, static_cast<std::uint32_t>(e));
  os.put(static_cast<char>(dtype));
  for (double v : t.data()) {
    if (dtype == DType::f64) {
      put_le(os, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
}

Tensor read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4) throw TruncatedError("unexpected end of data while reading tensor magic");
  if (!std::equal(magic, magic + 4, kTensorMagic)) throw MagicError("not a TFTN tensor record (bad magic)");
  const auto version = read_u32(is, "tensor version");
  if (version != kTensorVersion) {
    throw VersionError("unsupported TFTN version " + std::to_string(version));
  }
  const auto rank = read_u32(is, "tensor rank");
  if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32(is, "tensor extent");
    if (e == 0) throw FormatError("tensor extent of zero");
  }
  const int dtype_byte = is.get();
  if (dtype_byte == std::char_traits<char>::eof()) throw TruncatedError("unexpected end of data while reading dtype");
  if (dtype_byte != 0 && dtype_byte != 1) throw FormatError("unknown tensor dtype " + std::to_string(dtype_byte));
  const auto dtype = static_cast<DType>(dtype_byte);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) {
    if (dtype == DType::f64) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(is, "tensor payload"));
    } else {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is, "tensor payload")));
    }
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t, dtype);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const FormatError& e) {
    // Rethrow with the file name but keep the concrete error kind.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    if (dynamic_cast<const MagicError*>(&e)) throw MagicError(msg);
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError(msg);
    throw FormatError(msg);
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace transfusion::io
