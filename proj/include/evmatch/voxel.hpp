#pragma once

#include <cmath>
#include <span>

#include "evmatch/events.hpp"
#include "evmatch/tensor.hpp"

namespace evmatch {

// Which end of the window the log-scaled bins are anchored to.
// `kEnd` (default): the time fraction is measured from the window end and
// bin c accumulates events with c* <= c, giving nested windows where bin 0
// holds only the most recent events (finest temporal resolution) and the
// coarsest bin holds the whole window.
// `kStart`: the literal printed formula — fraction from the window start
// and a strict c* < c test; kept for comparison.
enum class TimeAnchor { kEnd, kStart };

inline TimeAnchor time_anchor_from_string(const std::string& s) {
  if (s == "end") return TimeAnchor::kEnd;
  if (s == "start") return TimeAnchor::kStart;
  fail("time_anchor: expected 'end' or 'start', got '" + s + "'");
}

// B-bin multi-timescale voxel. data is [B x H x W], signed event mass.
struct EventVolume {
  Tensor data;
  int64_t bins = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t t_first = 0;
  int64_t t_last = 0;

  double at(int64_t c, int64_t y, int64_t x) const { return data.at3(c, y, x); }
};

// Real-valued event sample; the bilinear kernel only matters for
// fractional coordinates (warped or rescaled inputs).
struct RealEvent {
  double x = 0;
  double y = 0;
  int64_t t = 0;
  int p = 1;
};

// Bin threshold c* = max(0, B-1 + log2(s)) with s the scaled timestamp.
// End anchor: s = (t_last - t) / (t_last - t_first); a degenerate window
// (t_last == t_first) maps every event to c* = 0 (treated as most recent).
inline double scaled_timestamp(int64_t t, int64_t t_first, int64_t t_last, int64_t bins,
                               TimeAnchor anchor = TimeAnchor::kEnd) {
  require(bins >= 1, "scaled_timestamp: B must be >= 1");
  require(t >= t_first && t <= t_last, "scaled_timestamp: t outside window");
  if (t_last == t_first) return 0.0;
  double span = static_cast<double>(t_last - t_first);
  double s = anchor == TimeAnchor::kEnd ? static_cast<double>(t_last - t) / span
                                        : static_cast<double>(t - t_first) / span;
  if (s <= 0.0) return 0.0;
  return std::max(0.0, static_cast<double>(bins - 1) + std::log2(s));
}

// V(c,x,y) = sum_i p_i * k(x - x_i) * k(y - y_i) * I(c >= c_i*) with
// k(a) = max(0, 1 - |a|). Bilinear mass falling outside the grid is
// discarded. Start anchor uses the strict indicator I(c > c_i*).
inline EventVolume build_volume(std::span<const RealEvent> events, int64_t width, int64_t height,
                                int64_t bins, int64_t t_first, int64_t t_last,
                                TimeAnchor anchor = TimeAnchor::kEnd) {
  require(bins >= 1, "build_volume: B must be >= 1");
  EventVolume vol;
  vol.data = Tensor({bins, height, width});
  vol.bins = bins;
  vol.height = height;
  vol.width = width;
  vol.t_first = t_first;
  vol.t_last = t_last;
  for (const RealEvent& e : events) {
    double cstar = scaled_timestamp(e.t, t_first, t_last, bins, anchor);
    // First contributing bin: c >= c* (end) or c > c* (start).
    int64_t c0 = anchor == TimeAnchor::kEnd ? static_cast<int64_t>(std::ceil(cstar))
                                            : static_cast<int64_t>(std::floor(cstar)) + 1;
    if (c0 >= bins) continue;
    int64_t x0 = static_cast<int64_t>(std::floor(e.x));
    int64_t y0 = static_cast<int64_t>(std::floor(e.y));
    auto kb = [](double a) { return std::max(0.0, 1.0 - std::abs(a)); };
    for (int dy = 0; dy < 2; ++dy) {
      int64_t yy = y0 + dy;
      if (yy < 0 || yy >= height) continue;
      double wy = kb(static_cast<double>(yy) - e.y);
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        int64_t xx = x0 + dx;
        if (xx < 0 || xx >= width) continue;
        double wx = kb(static_cast<double>(xx) - e.x);
        if (wx == 0.0) continue;
        double mass = static_cast<double>(e.p) * wx * wy;
        for (int64_t c = c0; c < bins; ++c) vol.data.at3(c, yy, xx) += mass;
      }
    }
  }
  return vol;
}

inline EventVolume build_volume(const EventStream& s, int64_t bins,
                                TimeAnchor anchor = TimeAnchor::kEnd) {
  std::vector<RealEvent> evs;
  evs.reserve(s.events.size());
  for (const Event& e : s.events)
    evs.push_back({static_cast<double>(e.x), static_cast<double>(e.y), e.t, e.p});
  int64_t t0 = s.empty() ? 0 : s.t_first();
  int64_t t1 = s.empty() ? 0 : s.t_last();
  return build_volume(evs, s.width, s.height, bins, t0, t1, anchor);
}

}  // namespace evmatch
