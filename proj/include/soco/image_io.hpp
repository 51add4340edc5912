#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "soco/errors.hpp"
#include "soco/image.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Binary PPM (P6, maxval 255). Byte-identical output for identical tensors,
// which is what the dataset determinism contract needs.
inline void write_ppm(const std::string& path, const Tensor& img) {
  check_image(img);
  int64_t h = img_h(img), w = img_w(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("write_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw FormatError("write_ppm: short write to " + path);
}

namespace detail {
inline int ppm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments, per the PPM grammar.
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  in >> v;
  return v;
}
}  // namespace detail

inline Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw FormatError("read_ppm: not a P6 file: " + path);
  int64_t w = detail::ppm_next_int(f);
  int64_t h = detail::ppm_next_int(f);
  int64_t maxval = detail::ppm_next_int(f);
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("read_ppm: bad header in " + path);
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * 3));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw FormatError("read_ppm: truncated pixel data in " + path);
  Tensor img({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  return img;
}

}  // namespace soco
