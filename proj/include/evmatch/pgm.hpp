#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "evmatch/tensor.hpp"

namespace evmatch {

// 8-bit grayscale image with binary PGM (P5) / PPM (P6) round-trip.
struct ImageU8 {
  uint32_t width = 0;
  uint32_t height = 0;
  std::vector<uint8_t> pixels;  // row-major, 1 or 3 channels
  uint32_t channels = 1;

  uint8_t& at(uint32_t x, uint32_t y, uint32_t c = 0) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(uint32_t x, uint32_t y, uint32_t c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

inline void write_pnm(const ImageU8& img, const std::string& path) {
  require(img.channels == 1 || img.channels == 3, "write_pnm: 1 or 3 channels");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "write_pnm: cannot open " + path);
  f << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  require(f.good(), "write_pnm: I/O failure writing " + path);
}

inline ImageU8 read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_pnm: cannot open " + path);
  std::string magic;
  f >> magic;
  require(magic == "P5" || magic == "P6", "read_pnm: unsupported magic '" + magic + "' in " + path);
  auto skip_ws_comments = [&]() {
    while (true) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
  };
  ImageU8 img;
  img.channels = magic == "P5" ? 1 : 3;
  int maxval = 0;
  skip_ws_comments();
  f >> img.width;
  skip_ws_comments();
  f >> img.height;
  skip_ws_comments();
  f >> maxval;
  require(maxval == 255, "read_pnm: only 8-bit supported: " + path);
  f.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  require(f.good(), "read_pnm: truncated payload in " + path);
  return img;
}

// Linear intensity in [0,1] -> 8-bit with rounding.
inline ImageU8 to_u8(const Tensor& gray /* [H x W] */) {
  ImageU8 img;
  img.height = static_cast<uint32_t>(gray.dim(0));
  img.width = static_cast<uint32_t>(gray.dim(1));
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  for (int64_t i = 0; i < gray.numel(); ++i) {
    double v = std::clamp(gray[i], 0.0, 1.0);
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace evmatch
