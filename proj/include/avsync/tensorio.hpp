// Self-describing binary tensor container: named entries with explicit dims,
// dtype and byte order. This is the adapter exchange format and also backs
// fixture clips and checkpoints.
//
// Layout (all integers little-endian on disk when the order marker reads
// 0x01020304; readers reject foreign byte order):
//   magic "AVTC" | u32 version | u32 order marker | u32 entry count
//   per entry: u32 name_len | name | u8 dtype | u32 ndim | i64 dims[ndim]
//              | payload (row-major)
#pragma once

#include "avsync/common.hpp"
#include "avsync/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avsync::tensorio {

enum class DType : std::uint8_t { u8 = 0, f32 = 1, f64 = 2, i64 = 3, utf8 = 4 };

std::size_t dtype_size(DType t);

struct Entry {
  std::string name;
  DType dtype = DType::u8;
  std::vector<std::int64_t> dims;
  std::vector<std::uint8_t> bytes;

  std::int64_t element_count() const;

  static Entry from_string(const std::string& name, const std::string& value);
  static Entry from_scalar_i64(const std::string& name, std::int64_t value);
  static Entry from_scalar_f64(const std::string& name, double value);
  // Matrices are written row-major with dims {rows, cols}.
  static Entry from_matrix_f64(const std::string& name, const MatX& m);
  static Entry from_matrix_f32(const std::string& name, const MatX& m);
  static Entry from_vector_f64(const std::string& name, const VecX& v);
  // Frames pack to u8 [T, H, W, 3], channel-interleaved.
  static Entry from_frames(const std::string& name, const std::vector<Frame>& frames);

  std::string as_string() const;
  std::int64_t as_scalar_i64() const;
  double as_scalar_f64() const;
  MatX as_matrix() const;  // accepts f32 or f64 2-D entries
  VecX as_vector() const;
  std::vector<Frame> as_frames() const;
};

struct Container {
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const;
  // Throws DecodeError when absent.
  const Entry& require(const std::string& name) const;
  void add(Entry e) { entries.push_back(std::move(e)); }
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace avsync::tensorio
