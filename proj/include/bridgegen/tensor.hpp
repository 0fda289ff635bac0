#pragma once

// Dense row-major float64 tensor plus its binary serialization (BBT1).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bridgegen/common.hpp"

namespace bridgegen {

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "float64 storage requires IEEE-754 doubles");

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw ValueError("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ValueError("tensor dimensions must be positive");
    if (d > std::numeric_limits<std::size_t>::max() / n)
      throw ValueError("tensor shape overflows size_t");
    n *= d;
  }
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(Shape shape_, std::vector<double> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    std::size_t n = shape_numel(shape);
    if (data.size() != n)
      throw ValueError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_to_string(shape));
    for (double v : data)
      if (!std::isfinite(v)) throw ValueError("tensor values must be finite");
  }

  static Tensor zeros(const Shape& shape) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0));
  }

  static Tensor full(const Shape& shape, double value) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ValueError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape) +
                     " vs " + shape_to_string(b.shape));
}

// ---- BBT1 serialization ----
// magic "BBT1" | u32 rank | u32 dim[rank] | f64 payload, all little-endian.

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw IoError("unexpected end of stream");
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  read_bytes(is, &v, 4);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  read_bytes(is, &v, 8);
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  detail::write_bytes(os, "BBT1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw ValueError("tensor dimension too large for serialization");
    detail::write_u32(os, static_cast<std::uint32_t>(d));
  }
  detail::write_bytes(os, t.data.data(), t.data.size() * 8);
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  detail::read_bytes(is, magic, 4);
  if (std::memcmp(magic, "BBT1", 4) != 0) throw IoError("bad tensor magic");
  std::uint32_t rank = detail::read_u32(is);
  if (rank == 0 || rank > 8) throw IoError("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint32_t v = detail::read_u32(is);
    if (v == 0) throw IoError("zero tensor dimension");
    d = v;
  }
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d > std::numeric_limits<std::size_t>::max() / n) throw IoError("tensor shape overflow");
    n *= d;
  }
  std::vector<double> data(n);
  detail::read_bytes(is, data.data(), n * 8);
  for (double v : data)
    if (!std::isfinite(v)) throw IoError("tensor payload contains non-finite values");
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t);
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor(is);
}

inline std::string tensor_to_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

}  // namespace bridgegen
