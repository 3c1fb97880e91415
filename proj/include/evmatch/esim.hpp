#pragma once

#include <algorithm>
#include <vector>

#include "evmatch/events.hpp"
#include "evmatch/rng.hpp"

// Contrast-threshold event simulator: per pixel, log intensity is linearly
// interpolated between frames and an event fires each time the signal
// crosses the reference by +-C, with the reference stepping by C per event.

namespace evmatch {

struct SensorModel {
  double c_pos = 0.25;         // positive contrast threshold (log units)
  double c_neg = 0.25;         // negative contrast threshold
  int64_t refractory_ns = 0;   // minimum inter-event time per pixel
  double noise_rate_hz = 0.0;  // Poisson background events per pixel

  void validate() const {
    require(c_pos > 0 && c_neg > 0, "SensorModel: thresholds must be > 0");
    require(refractory_ns >= 0 && noise_rate_hz >= 0, "SensorModel: negative rate");
  }
};

// Contrast sensitivity sampled per sequence from U(0.16, 0.34).
inline double sample_contrast(Rng& rng) { return rng.uniform(0.16, 0.34); }

inline EventStream frames_to_events(const std::vector<Tensor>& frames, const SensorModel& sensor,
                                    double fps, Rng& rng) {
  sensor.validate();
  require(frames.size() >= 2, "frames_to_events: need at least 2 frames");
  int64_t height = frames[0].dim(0), width = frames[0].dim(1);
  double dt_ns = 1e9 / fps;
  EventStream out;
  out.width = static_cast<uint32_t>(width);
  out.height = static_cast<uint32_t>(height);

  std::vector<Event> events;
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      double ref = frames[0].at2(y, x);
      int64_t last_emit = std::numeric_limits<int64_t>::min() / 2;
      for (size_t f = 0; f + 1 < frames.size(); ++f) {
        double v0 = frames[f].at2(y, x);
        double v1 = frames[f + 1].at2(y, x);
        double t0 = static_cast<double>(f) * dt_ns;
        if (v1 > v0) {
          while (ref + sensor.c_pos <= v1) {
            ref += sensor.c_pos;
            int64_t t = static_cast<int64_t>(std::llround(t0 + dt_ns * (ref - v0) / (v1 - v0)));
            if (t - last_emit >= sensor.refractory_ns) {
              events.push_back({static_cast<uint16_t>(x), static_cast<uint16_t>(y), t, +1});
              last_emit = t;
            }
          }
        } else if (v1 < v0) {
          while (ref - sensor.c_neg >= v1) {
            ref -= sensor.c_neg;
            int64_t t = static_cast<int64_t>(std::llround(t0 + dt_ns * (ref - v0) / (v1 - v0)));
            if (t - last_emit >= sensor.refractory_ns) {
              events.push_back({static_cast<uint16_t>(x), static_cast<uint16_t>(y), t, -1});
              last_emit = t;
            }
          }
        }
      }
      if (sensor.noise_rate_hz > 0.0) {
        double t_end = static_cast<double>(frames.size() - 1) * dt_ns;
        double t = 0.0;
        while (true) {
          t += -std::log(std::max(1e-300, rng.uniform())) * 1e9 / sensor.noise_rate_hz;
          if (t >= t_end) break;
          events.push_back({static_cast<uint16_t>(x), static_cast<uint16_t>(y),
                            static_cast<int64_t>(std::llround(t)),
                            static_cast<int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
        }
      }
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  out.events = std::move(events);
  return out;
}

}  // namespace evmatch
