#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mmattack/core.hpp"
#include "mmattack/errors.hpp"

namespace mmattack {

// Binary PNM I/O: P6 (RGB) and P5 (grayscale), maxval 255 only. 8-bit values
// map to [0,1] by division with 255. Quantization happens only at export;
// attack math stays in real pixels.

namespace detail {

inline bool pnm_space(int c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Skips whitespace and '#' comments, returns offset of the next token byte.
inline std::size_t pnm_skip(const std::string& data, std::size_t pos) {
  while (pos < data.size()) {
    if (pnm_space(data[pos])) {
      ++pos;
    } else if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  return pos;
}

inline long pnm_int(const std::string& data, std::size_t& pos, const char* what) {
  pos = pnm_skip(data, pos);
  std::size_t start = pos;
  long value = 0;
  while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
    value = value * 10 + (data[pos] - '0');
    if (value > 1000000000L) break;
    ++pos;
  }
  if (pos == start) {
    std::ostringstream os;
    os << "PNM parse error: expected " << what << " at byte offset " << start;
    throw ParseError(os.str());
  }
  return value;
}

}  // namespace detail

inline Image load_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (data.size() < 2 || data[0] != 'P' || (data[1] != '6' && data[1] != '5')) {
    throw ParseError("PNM parse error: bad magic at byte offset 0 in " + path.string() +
                     " (want P6 or P5)");
  }
  int channels = data[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  long width = detail::pnm_int(data, pos, "width");
  long height = detail::pnm_int(data, pos, "height");
  long maxval = detail::pnm_int(data, pos, "maxval");
  if (width <= 0 || height <= 0 || width > 1 << 20 || height > 1 << 20) {
    std::ostringstream os;
    os << "PNM parse error: bad dimensions " << width << "x" << height << " at byte offset "
       << pos;
    throw ParseError(os.str());
  }
  if (maxval != 255) {
    std::ostringstream os;
    os << "PNM parse error: unsupported maxval " << maxval << " (only 255 is supported)";
    throw ParseError(os.str());
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= data.size() || !detail::pnm_space(data[pos])) {
    std::ostringstream os;
    os << "PNM parse error: missing raster separator at byte offset " << pos;
    throw ParseError(os.str());
  }
  ++pos;
  std::size_t expected = static_cast<std::size_t>(width) * height * channels;
  if (data.size() - pos < expected) {
    std::ostringstream os;
    os << "PNM parse error: raster truncated at byte offset " << data.size() << " (need "
       << expected << " bytes from offset " << pos << ")";
    throw ParseError(os.str());
  }

  Image img;
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.channels = channels;
  img.pixels.resize(expected);
  for (std::size_t i = 0; i < expected; ++i)
    img.pixels[i] = static_cast<unsigned char>(data[pos + i]) / 255.0;
  return img;
}

// Round-half-up quantization to 8 bits.
inline unsigned char quantize_pixel(double v) {
  double q = std::floor(v * 255.0 + 0.5);
  if (q < 0.0) q = 0.0;
  if (q > 255.0) q = 255.0;
  return static_cast<unsigned char>(q);
}

inline void write_image_file(const Image& image, const std::filesystem::path& path) {
  image.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file: " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n255\n";
  std::string raster;
  raster.reserve(image.pixels.size());
  for (double v : image.pixels) raster.push_back(static_cast<char>(quantize_pixel(v)));
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError("short write on image file: " + path.string());
}

}  // namespace mmattack
