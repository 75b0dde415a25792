#include "avsync/tensorio.hpp"

#include <cstring>
#include <fstream>

namespace avsync::tensorio {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kOrderMarker = 0x01020304u;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DecodeError("tensor container truncated");
  return v;
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::u8:
    case DType::utf8:
      return 1;
    case DType::f32:
      return 4;
    case DType::f64:
    case DType::i64:
      return 8;
  }
  throw DecodeError("unknown dtype");
}

std::int64_t Entry::element_count() const {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Entry Entry::from_string(const std::string& name, const std::string& value) {
  Entry e;
  e.name = name;
  e.dtype = DType::utf8;
  e.dims = {static_cast<std::int64_t>(value.size())};
  e.bytes.assign(value.begin(), value.end());
  return e;
}

Entry Entry::from_scalar_i64(const std::string& name, std::int64_t value) {
  Entry e;
  e.name = name;
  e.dtype = DType::i64;
  e.dims = {1};
  e.bytes.resize(8);
  std::memcpy(e.bytes.data(), &value, 8);
  return e;
}

Entry Entry::from_scalar_f64(const std::string& name, double value) {
  Entry e;
  e.name = name;
  e.dtype = DType::f64;
  e.dims = {1};
  e.bytes.resize(8);
  std::memcpy(e.bytes.data(), &value, 8);
  return e;
}

Entry Entry::from_matrix_f64(const std::string& name, const MatX& m) {
  Entry e;
  e.name = name;
  e.dtype = DType::f64;
  e.dims = {m.rows(), m.cols()};
  e.bytes.resize(static_cast<std::size_t>(m.size()) * 8);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      reinterpret_cast<double*>(e.bytes.data()), m.rows(), m.cols()) = m;
  return e;
}

Entry Entry::from_matrix_f32(const std::string& name, const MatX& m) {
  Entry e;
  e.name = name;
  e.dtype = DType::f32;
  e.dims = {m.rows(), m.cols()};
  e.bytes.resize(static_cast<std::size_t>(m.size()) * 4);
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      reinterpret_cast<float*>(e.bytes.data()), m.rows(), m.cols()) = m.cast<float>();
  return e;
}

Entry Entry::from_vector_f64(const std::string& name, const VecX& v) {
  Entry e;
  e.name = name;
  e.dtype = DType::f64;
  e.dims = {v.size()};
  e.bytes.resize(static_cast<std::size_t>(v.size()) * 8);
  std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
  return e;
}

Entry Entry::from_frames(const std::string& name, const std::vector<Frame>& frames) {
  Entry e;
  e.name = name;
  e.dtype = DType::u8;
  const std::int64_t t = static_cast<std::int64_t>(frames.size());
  const std::int64_t h = t > 0 ? frames[0].height() : 0;
  const std::int64_t w = t > 0 ? frames[0].width() : 0;
  e.dims = {t, h, w, 3};
  e.bytes.resize(static_cast<std::size_t>(t * h * w * 3));
  std::size_t off = 0;
  for (const Frame& f : frames) {
    if (f.height() != h || f.width() != w)
      throw ShapeError("from_frames: inconsistent frame sizes");
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) e.bytes[off++] = f.planes[c](i, j);
  }
  return e;
}

std::string Entry::as_string() const {
  if (dtype != DType::utf8) throw DecodeError("entry '" + name + "' is not utf8");
  return std::string(bytes.begin(), bytes.end());
}

std::int64_t Entry::as_scalar_i64() const {
  if (dtype != DType::i64 || element_count() != 1)
    throw DecodeError("entry '" + name + "' is not a scalar i64");
  std::int64_t v;
  std::memcpy(&v, bytes.data(), 8);
  return v;
}

double Entry::as_scalar_f64() const {
  if (dtype != DType::f64 || element_count() != 1)
    throw DecodeError("entry '" + name + "' is not a scalar f64");
  double v;
  std::memcpy(&v, bytes.data(), 8);
  return v;
}

MatX Entry::as_matrix() const {
  if (dims.size() != 2) throw DecodeError("entry '" + name + "' is not 2-D");
  const Index rows = dims[0], cols = dims[1];
  if (dtype == DType::f64) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
        reinterpret_cast<const double*>(bytes.data()), rows, cols);
  }
  if (dtype == DType::f32) {
    return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
               reinterpret_cast<const float*>(bytes.data()), rows, cols)
        .cast<double>();
  }
  throw DecodeError("entry '" + name + "' has non-float dtype");
}

VecX Entry::as_vector() const {
  if (dims.size() != 1 || dtype != DType::f64)
    throw DecodeError("entry '" + name + "' is not a 1-D f64 vector");
  return Eigen::Map<const VecX>(reinterpret_cast<const double*>(bytes.data()),
                                dims[0]);
}

std::vector<Frame> Entry::as_frames() const {
  if (dims.size() != 4 || dims[3] != 3 || dtype != DType::u8)
    throw DecodeError("entry '" + name + "' is not u8 [T,H,W,3]");
  const std::int64_t t = dims[0], h = dims[1], w = dims[2];
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(t));
  std::size_t off = 0;
  for (std::int64_t n = 0; n < t; ++n) {
    Frame f(h, w);
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) f.planes[c](i, j) = bytes[off++];
    frames.push_back(std::move(f));
  }
  return frames;
}

const Entry* Container::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const Entry& Container::require(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw DecodeError("container missing entry '" + name + "'");
  return *e;
}

void write_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DecodeError("cannot open for write: " + path);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, kOrderMarker);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.entries.size()));
  for (const Entry& e : c.entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put<std::int64_t>(os, d);
    const std::size_t expect = static_cast<std::size_t>(e.element_count()) *
                               dtype_size(e.dtype);
    if (e.bytes.size() != expect)
      throw ShapeError("entry '" + e.name + "' payload size mismatch");
    os.write(reinterpret_cast<const char*>(e.bytes.data()),
             static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!os) throw DecodeError("write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DecodeError("not a tensor container: " + path);
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw DecodeError("unsupported container version");
  const auto marker = get<std::uint32_t>(is);
  if (marker != kOrderMarker)
    throw DecodeError("foreign byte order in container: " + path);
  const auto count = get<std::uint32_t>(is);
  Container c;
  c.entries.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    Entry e;
    const auto name_len = get<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    e.dtype = static_cast<DType>(get<std::uint8_t>(is));
    dtype_size(e.dtype);  // validates
    const auto ndim = get<std::uint32_t>(is);
    e.dims.resize(ndim);
    for (auto& d : e.dims) {
      d = get<std::int64_t>(is);
      if (d < 0) throw DecodeError("negative dim in container");
    }
    const std::size_t payload = static_cast<std::size_t>(e.element_count()) *
                                dtype_size(e.dtype);
    e.bytes.resize(payload);
    is.read(reinterpret_cast<char*>(e.bytes.data()),
            static_cast<std::streamsize>(payload));
    if (!is) throw DecodeError("tensor container truncated: " + path);
    c.entries.push_back(std::move(e));
  }
  return c;
}

}  // namespace avsync::tensorio
