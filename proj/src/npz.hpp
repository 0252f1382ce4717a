#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cfasl {

/// One array out of an .npy payload. Data is kept raw; use the typed
/// accessors to convert.
struct NpyArray {
  enum class DType { u8, i8_, i32, i64, f32, f64 };

  DType dtype = DType::f64;
  std::vector<int64_t> shape;
  std::vector<uint8_t> raw;

  int64_t numel() const;
  size_t element_size() const;
  std::vector<double> as_doubles() const;
  std::vector<int64_t> as_int64s() const;
};

/// Reads a zip-of-named-arrays archive (the format numpy's savez produces);
/// entries may be stored or deflate-compressed. Names are returned without
/// the ".npy" suffix. Malformed archives raise an io error prefixed with
/// "corrupt archive".
std::map<std::string, NpyArray> read_npz(const std::string& path);

/// Writes arrays as an uncompressed zip of .npy members, readable by numpy.
void write_npz(const std::string& path, const std::map<std::string, NpyArray>& arrays);

NpyArray make_npy_u8(std::vector<int64_t> shape, std::vector<uint8_t> data);
NpyArray make_npy_i64(std::vector<int64_t> shape, const std::vector<int64_t>& data);
NpyArray make_npy_f64(std::vector<int64_t> shape, const std::vector<double>& data);

}  // namespace cfasl
