#pragma once

#include "evmatch/events.hpp"
#include "evmatch/matchfile.hpp"
#include "evmatch/pgm.hpp"
#include "evmatch/voxel.hpp"

namespace evmatch {

// Grayscale event frame: absolute event mass per pixel, max-normalized.
inline Tensor event_frame(const EventStream& s) {
  Tensor acc({static_cast<int64_t>(s.height), static_cast<int64_t>(s.width)});
  for (const Event& e : s.events) acc.at2(e.y, e.x) += 1.0;
  double mx = 0;
  for (int64_t i = 0; i < acc.numel(); ++i) mx = std::max(mx, acc[i]);
  if (mx > 0)
    for (int64_t i = 0; i < acc.numel(); ++i) acc[i] /= mx;
  return acc;
}

namespace detail {

inline void draw_line(ImageU8& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint8_t r,
                      uint8_t g, uint8_t b) {
  int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int64_t err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < static_cast<int64_t>(img.width) && y0 >= 0 &&
        y0 < static_cast<int64_t>(img.height)) {
      img.at(static_cast<uint32_t>(x0), static_cast<uint32_t>(y0), 0) = r;
      img.at(static_cast<uint32_t>(x0), static_cast<uint32_t>(y0), 1) = g;
      img.at(static_cast<uint32_t>(x0), static_cast<uint32_t>(y0), 2) = b;
    }
    if (x0 == x1 && y0 == y1) break;
    int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

// Side-by-side visualization (PPM): view A event frame on the left, view B
// (event frame or image) on the right, match lines in green.
inline ImageU8 render_overlay(const Tensor& gray_a, const Tensor& gray_b,
                              const std::vector<PixelMatch>& matches) {
  int64_t h = std::max(gray_a.dim(0), gray_b.dim(0));
  int64_t wa = gray_a.dim(1), wb = gray_b.dim(1);
  ImageU8 img;
  img.width = static_cast<uint32_t>(wa + wb);
  img.height = static_cast<uint32_t>(h);
  img.channels = 3;
  img.pixels.assign(static_cast<size_t>(img.width) * img.height * 3, 0);
  auto blit = [&](const Tensor& g, int64_t x_off) {
    for (int64_t y = 0; y < g.dim(0); ++y)
      for (int64_t x = 0; x < g.dim(1); ++x) {
        auto v = static_cast<uint8_t>(std::lround(std::clamp(g.at2(y, x), 0.0, 1.0) * 255.0));
        for (uint32_t c = 0; c < 3; ++c)
          img.at(static_cast<uint32_t>(x + x_off), static_cast<uint32_t>(y), c) = v;
      }
  };
  blit(gray_a, 0);
  blit(gray_b, wa);
  for (const PixelMatch& m : matches)
    detail::draw_line(img, static_cast<int64_t>(std::lround(m.ax)),
                      static_cast<int64_t>(std::lround(m.ay)),
                      static_cast<int64_t>(std::lround(m.bx)) + wa,
                      static_cast<int64_t>(std::lround(m.by)), 40, 220, 60);
  return img;
}

}  // namespace evmatch
