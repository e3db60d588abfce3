#pragma once

// MUVT container: magic "MUVT", u16 version, u8 dtype (0 = f64, 1 = f32),
// u8 ndim, ndim x u64 extents, row-major payload. All little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "muvfs/tensor.hpp"

namespace muvfs {

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

inline constexpr std::uint16_t kTensorFileVersion = 1;

enum class TensorFileErrorKind { Io, BadMagic, UnsupportedVersion, BadDType, TruncatedHeader, TruncatedPayload, NonFinite };

std::string to_string(TensorFileErrorKind kind);

class TensorFileError : public std::runtime_error {
 public:
  TensorFileError(TensorFileErrorKind kind, const std::string& what)
      : std::runtime_error(to_string(kind) + ": " + what), kind_(kind) {}
  TensorFileErrorKind kind() const { return kind_; }

 private:
  TensorFileErrorKind kind_;
};

struct TensorBlob {
  Shape shape;
  DType dtype = DType::F64;
  std::vector<double> values;
};

std::vector<std::uint8_t> encode_tensor(const Shape& shape, std::span<const double> values, DType dtype);
TensorBlob decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor_file(const std::filesystem::path& path, const Shape& shape, std::span<const double> values,
                       DType dtype = DType::F64);
void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor, DType dtype = DType::F64);
TensorBlob read_tensor_blob(const std::filesystem::path& path);
Tensor read_tensor_file(const std::filesystem::path& path);

}  // namespace muvfs
