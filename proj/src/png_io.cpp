#include "png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

#include "common.hpp"

namespace cfasl {

namespace {

void wr32be(std::string& s, uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void chunk(std::string& out, const char type[5], const std::string& data) {
  wr32be(out, static_cast<uint32_t>(data.size()));
  std::string body = std::string(type, 4) + data;
  out += body;
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
            static_cast<uInt>(body.size())));
  wr32be(out, crc);
}

}  // namespace

void write_png_gray(const std::string& path, const std::vector<double>& pixels,
                    int64_t width, int64_t height) {
  CFASL_CHECK_ARG(width > 0 && height > 0 &&
                      static_cast<int64_t>(pixels.size()) == width * height,
                  "write_png_gray: bad dimensions");

  // Raw scanlines, each prefixed by filter byte 0.
  std::vector<uint8_t> raw(static_cast<size_t>(height * (width + 1)));
  size_t p = 0;
  for (int64_t y = 0; y < height; ++y) {
    raw[p++] = 0;
    for (int64_t x = 0; x < width; ++x) {
      double v = std::clamp(pixels[static_cast<size_t>(y * width + x)], 0.0, 1.0);
      raw[p++] = static_cast<uint8_t>(v * 255.0 + 0.5);
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw_io("png compression failed");
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  wr32be(ihdr, static_cast<uint32_t>(width));
  wr32be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT",
        std::string(reinterpret_cast<const char*>(compressed.data()), compressed.size()));
  chunk(out, "IEND", "");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw_io("cannot write " + path);
  f << out;
  if (!f) throw_io("write failed: " + path);
}

}  // namespace cfasl
