#pragma once

// Binary PNM I/O: 8-bit P5 (gray) and P6 (RGB). Images map pixel values to
// [0,1] by v/255; label maps keep raw pixel values as integer class ids.

#include <cmath>
#include <fstream>
#include <string>

#include "bridgegen/tensor.hpp"

namespace bridgegen {

namespace detail {

inline int pnm_token(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one non-negative integer.
  int c = is.peek();
  while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    c = is.peek();
  }
  int v = -1;
  if (!(is >> v) || v < 0) throw IoError("bad header token in " + path);
  return v;
}

inline std::vector<unsigned char> pnm_payload(std::istream& is, std::size_t n,
                                              const std::string& path) {
  int sep = is.get();  // single whitespace byte between maxval and payload
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    throw IoError("missing header separator in " + path);
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw IoError("truncated payload in " + path);
  return buf;
}

inline std::ifstream pnm_open(const std::string& path, const char* magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char m[2];
  is.read(m, 2);
  if (is.gcount() != 2 || m[0] != magic[0] || m[1] != magic[1])
    throw IoError("not a " + std::string(magic) + " file: " + path);
  return is;
}

inline unsigned char quantize_unit(double v) {
  double q = std::lround(v * 255.0);
  if (q < 0.0) q = 0.0;
  if (q > 255.0) q = 255.0;
  return static_cast<unsigned char>(q);
}

}  // namespace detail

inline Tensor read_pgm(const std::string& path) {
  std::ifstream is = detail::pnm_open(path, "P5");
  std::size_t w = static_cast<std::size_t>(detail::pnm_token(is, path));
  std::size_t h = static_cast<std::size_t>(detail::pnm_token(is, path));
  int maxval = detail::pnm_token(is, path);
  if (w == 0 || h == 0 || maxval != 255) throw IoError("unsupported PGM geometry in " + path);
  auto buf = detail::pnm_payload(is, w * h, path);
  Tensor out = Tensor::zeros({h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
  return out;
}

// Same container, but pixel values are kept verbatim as class ids.
inline Tensor read_pgm_labels(const std::string& path) {
  std::ifstream is = detail::pnm_open(path, "P5");
  std::size_t w = static_cast<std::size_t>(detail::pnm_token(is, path));
  std::size_t h = static_cast<std::size_t>(detail::pnm_token(is, path));
  int maxval = detail::pnm_token(is, path);
  if (w == 0 || h == 0 || maxval != 255) throw IoError("unsupported PGM geometry in " + path);
  auto buf = detail::pnm_payload(is, w * h, path);
  Tensor out = Tensor::zeros({h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = static_cast<double>(buf[i]);
  return out;
}

inline void write_pgm(const std::string& path, const Tensor& img) {
  if (img.rank() != 2) throw ValueError("write_pgm: image must be [H, W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
  for (double v : img.data) os.put(static_cast<char>(detail::quantize_unit(v)));
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

inline void write_pgm_labels(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ValueError("write_pgm_labels: map must be [H, W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << map.shape[1] << " " << map.shape[0] << "\n255\n";
  for (double v : map.data) {
    if (v != std::floor(v) || v < 0.0 || v > 255.0)
      throw ValueError("write_pgm_labels: values must be integers in [0, 255]");
    os.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is = detail::pnm_open(path, "P6");
  std::size_t w = static_cast<std::size_t>(detail::pnm_token(is, path));
  std::size_t h = static_cast<std::size_t>(detail::pnm_token(is, path));
  int maxval = detail::pnm_token(is, path);
  if (w == 0 || h == 0 || maxval != 255) throw IoError("unsupported PPM geometry in " + path);
  auto buf = detail::pnm_payload(is, 3 * w * h, path);
  Tensor out = Tensor::zeros({3, h, w});  // channel-first
  for (std::size_t p = 0; p < w * h; ++p)
    for (std::size_t c = 0; c < 3; ++c) out.data[c * w * h + p] = buf[3 * p + c] / 255.0;
  return out;
}

inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.shape[0] != 3) throw ValueError("write_ppm: image must be [3, H, W]");
  std::size_t h = img.shape[1], w = img.shape[2];
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (std::size_t p = 0; p < w * h; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      os.put(static_cast<char>(detail::quantize_unit(img.data[c * w * h + p])));
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace bridgegen
