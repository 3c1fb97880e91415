#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "evmatch/tensor.hpp"

namespace evmatch {

// One sensor event. Timestamps are nanoseconds; polarity is +1 or -1.
struct Event {
  uint16_t x = 0;
  uint16_t y = 0;
  int64_t t = 0;
  int8_t p = 1;

  bool operator==(const Event&) const = default;
};

// Ordered event stream with sensor geometry. Events are sorted by t;
// same-timestamp bursts keep their original order.
struct EventStream {
  uint32_t width = 0;
  uint32_t height = 0;
  std::vector<Event> events;

  bool empty() const { return events.empty(); }
  int64_t t_first() const {
    require(!empty(), "EventStream: t_first on empty stream");
    return events.front().t;
  }
  int64_t t_last() const {
    require(!empty(), "EventStream: t_last on empty stream");
    return events.back().t;
  }

  // Index of the first out-of-order or out-of-bounds record, -1 if valid.
  int64_t first_invalid_index() const {
    for (size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.x >= width || e.y >= height) return static_cast<int64_t>(i);
      if (e.p != 1 && e.p != -1) return static_cast<int64_t>(i);
      if (i > 0 && e.t < events[i - 1].t) return static_cast<int64_t>(i);
    }
    return -1;
  }

  void validate() const {
    int64_t bad = first_invalid_index();
    require(bad < 0, "EventStream: invalid record at index " + std::to_string(bad));
  }
};

// Events with t_start <= t < t_start + duration, geometry preserved.
// Binary search on the sorted timestamps; an empty result is valid.
inline EventStream slice_window(const EventStream& s, int64_t t_start, int64_t duration) {
  require(duration > 0, "slice_window: duration must be > 0");
  EventStream out;
  out.width = s.width;
  out.height = s.height;
  auto lo = std::lower_bound(s.events.begin(), s.events.end(), t_start,
                             [](const Event& e, int64_t t) { return e.t < t; });
  auto hi = std::lower_bound(lo, s.events.end(), t_start + duration,
                             [](const Event& e, int64_t t) { return e.t < t; });
  out.events.assign(lo, hi);
  return out;
}

}  // namespace evmatch
