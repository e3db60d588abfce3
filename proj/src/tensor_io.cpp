#include "muvfs/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace muvfs {

namespace {

static_assert(std::endian::native == std::endian::little, "MUVT I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'U', 'V', 'T'};

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

std::size_t element_size(DType dtype) { return dtype == DType::F64 ? 8 : 4; }

}  // namespace

std::string to_string(TensorFileErrorKind kind) {
  switch (kind) {
    case TensorFileErrorKind::Io: return "io error";
    case TensorFileErrorKind::BadMagic: return "bad magic";
    case TensorFileErrorKind::UnsupportedVersion: return "unsupported version";
    case TensorFileErrorKind::BadDType: return "bad dtype";
    case TensorFileErrorKind::TruncatedHeader: return "truncated header";
    case TensorFileErrorKind::TruncatedPayload: return "truncated payload";
    case TensorFileErrorKind::NonFinite: return "non-finite value";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_tensor(const Shape& shape, std::span<const double> values, DType dtype) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("encode_tensor: shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  }
  if (shape.size() > 255) throw ShapeError("encode_tensor: rank above 255");
  for (double v : values) {
    if (!std::isfinite(v)) throw TensorFileError(TensorFileErrorKind::NonFinite, "refusing to write");
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * shape.size() + values.size() * element_size(dtype));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, kTensorFileVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (std::size_t extent : shape) put<std::uint64_t>(out, extent);
  if (dtype == DType::F64) {
    for (double v : values) put<double>(out, v);
  } else {
    for (double v : values) put<float>(out, static_cast<float>(v));
  }
  return out;
}

TensorBlob decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw TensorFileError(TensorFileErrorKind::TruncatedHeader, "fewer than 8 header bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw TensorFileError(TensorFileErrorKind::BadMagic, "expected MUVT");
  std::size_t pos = 4;
  const auto version = get<std::uint16_t>(bytes, pos);
  if (version != kTensorFileVersion) {
    throw TensorFileError(TensorFileErrorKind::UnsupportedVersion, "version " + std::to_string(version));
  }
  const auto code = get<std::uint8_t>(bytes, pos);
  if (code > 1) throw TensorFileError(TensorFileErrorKind::BadDType, "code " + std::to_string(code));
  TensorBlob blob;
  blob.dtype = static_cast<DType>(code);
  const auto ndim = get<std::uint8_t>(bytes, pos);
  if (bytes.size() < pos + 8u * ndim) throw TensorFileError(TensorFileErrorKind::TruncatedHeader, "shape cut short");
  for (std::size_t i = 0; i < ndim; ++i) blob.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(bytes, pos)));
  const std::size_t n = shape_numel(blob.shape);
  const std::size_t need = n * element_size(blob.dtype);
  if (bytes.size() - pos < need) {
    throw TensorFileError(TensorFileErrorKind::TruncatedPayload,
                          "expected " + std::to_string(need) + " payload bytes, found " + std::to_string(bytes.size() - pos));
  }
  blob.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    blob.values[i] = blob.dtype == DType::F64 ? get<double>(bytes, pos) : static_cast<double>(get<float>(bytes, pos));
  }
  return blob;
}

void write_tensor_file(const std::filesystem::path& path, const Shape& shape, std::span<const double> values, DType dtype) {
  const auto bytes = encode_tensor(shape, values, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "short write to " + path.string());
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor, DType dtype) {
  write_tensor_file(path, tensor.shape(), tensor.data(), dtype);
}

TensorBlob read_tensor_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorFileError(TensorFileErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  TensorBlob blob = read_tensor_blob(path);
  return Tensor(std::move(blob.shape), std::move(blob.values));
}

}  // namespace muvfs
