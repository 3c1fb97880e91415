#include <catch2/catch_amalgamated.hpp>

#include "evmatch/rng.hpp"
#include "evmatch/tokenizer.hpp"
#include "evmatch/voxel.hpp"

using namespace evmatch;

namespace {

std::vector<RealEvent> random_events(uint64_t seed, size_t n, double w, double h, int64_t t0,
                                     int64_t t1) {
  Rng rng(seed);
  std::vector<RealEvent> evs;
  evs.reserve(n);
  for (size_t i = 0; i < n; ++i)
    evs.push_back({rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0),
                   rng.uniform_int(t0, t1), rng.uniform() < 0.5 ? 1 : -1});
  std::sort(evs.begin(), evs.end(), [](const RealEvent& a, const RealEvent& b) { return a.t < b.t; });
  return evs;
}

// Per-event scalar-loop accumulation straight from the definition:
// every event deposits p * k(x-x_i) * k(y-y_i) into every bin whose
// indicator admits it, scanning the whole grid brute-force.
Tensor oracle_volume(std::span<const RealEvent> events, int64_t w, int64_t h, int64_t bins,
                     int64_t t0, int64_t t1, TimeAnchor anchor) {
  Tensor v({bins, h, w});
  auto kb = [](double a) { return std::max(0.0, 1.0 - std::abs(a)); };
  for (const RealEvent& e : events) {
    double s = 0.0;
    if (t1 != t0)
      s = anchor == TimeAnchor::kEnd
              ? static_cast<double>(t1 - e.t) / static_cast<double>(t1 - t0)
              : static_cast<double>(e.t - t0) / static_cast<double>(t1 - t0);
    double cstar = s <= 0.0 ? 0.0 : std::max(0.0, static_cast<double>(bins - 1) + std::log2(s));
    for (int64_t c = 0; c < bins; ++c) {
      bool in = anchor == TimeAnchor::kEnd ? static_cast<double>(c) >= cstar
                                           : static_cast<double>(c) > cstar;
      if (!in) continue;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          double wx = kb(static_cast<double>(x) - e.x);
          double wy = kb(static_cast<double>(y) - e.y);
          if (wx == 0.0 || wy == 0.0) continue;
          v.at3(c, y, x) += static_cast<double>(e.p) * wx * wy;
        }
    }
  }
  return v;
}

}  // namespace

TEST_CASE("scaled_timestamp formula cases (B=4)") {
  // window [0, 1000ms] in ns
  int64_t t0 = 0, t1 = 1000000000;
  REQUIRE(scaled_timestamp(t1, t0, t1, 4) == 0.0);                       // s=0 clamps
  REQUIRE(scaled_timestamp(t0, t0, t1, 4) == Catch::Approx(3.0));        // s=1 -> B-1
  REQUIRE(scaled_timestamp(750000000, t0, t1, 4) == Catch::Approx(1.0)); // s=0.25 -> 3+log2(.25)
}

TEST_CASE("scaled_timestamp edge handling") {
  REQUIRE(scaled_timestamp(5, 5, 5, 4) == 0.0);  // degenerate window
  REQUIRE_THROWS_AS(scaled_timestamp(11, 0, 10, 4), Error);
  REQUIRE(scaled_timestamp(0, 0, 10, 1) == 0.0);  // B=1
  // Monotone non-increasing in t (end anchor).
  double prev = 1e300;
  for (int64_t t = 0; t <= 100; t += 5) {
    double c = scaled_timestamp(t, 0, 100, 6);
    REQUIRE(c <= prev + 1e-15);
    prev = c;
  }
}

TEST_CASE("single event at window end contributes to every bin") {
  std::vector<RealEvent> evs{{2.0, 3.0, 100, +1}};
  EventVolume v = build_volume(evs, 8, 8, 2, 0, 100);
  REQUIRE(v.at(0, 3, 2) == 1.0);
  REQUIRE(v.at(1, 3, 2) == 1.0);
  double total = 0;
  for (int64_t i = 0; i < v.data.numel(); ++i) total += std::abs(v.data[i]);
  REQUIRE(total == 2.0);
}

TEST_CASE("bilinear kernel splits fractional coordinates") {
  std::vector<RealEvent> evs{{2.5, 3.0, 100, +1}};
  EventVolume v = build_volume(evs, 8, 8, 2, 0, 100);
  REQUIRE(v.at(0, 3, 2) == 0.5);
  REQUIRE(v.at(0, 3, 3) == 0.5);
  REQUIRE(v.at(1, 3, 2) == 0.5);
  REQUIRE(v.at(1, 3, 3) == 0.5);
}

TEST_CASE("start-anchored literal formula leaves bin 0 empty") {
  auto evs = random_events(5, 200, 16, 16, 0, 1000);
  EventVolume v = build_volume(evs, 16, 16, 4, 0, 1000, TimeAnchor::kStart);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) REQUIRE(v.at(0, y, x) == 0.0);
  // and the latest event contributes nowhere
  std::vector<RealEvent> last{{4.0, 4.0, 1000, +1}};
  EventVolume vl = build_volume(last, 16, 16, 4, 0, 1000, TimeAnchor::kStart);
  for (int64_t i = 0; i < vl.data.numel(); ++i) REQUIRE(vl.data[i] == 0.0);
}

TEST_CASE("build_volume equals per-event scalar-loop oracle exactly") {
  for (auto anchor : {TimeAnchor::kEnd, TimeAnchor::kStart}) {
    auto evs = random_events(anchor == TimeAnchor::kEnd ? 42 : 43, 1000, 12, 10, 1000, 9000);
    EventVolume v = build_volume(evs, 12, 10, 4, 1000, 9000, anchor);
    Tensor want = oracle_volume(evs, 12, 10, 4, 1000, 9000, anchor);
    REQUIRE(v.data.numel() == want.numel());
    for (int64_t i = 0; i < want.numel(); ++i) REQUIRE(v.data[i] == want[i]);  // bitwise
  }
}

TEST_CASE("coarsest bin conserves signed event mass (interior events)") {
  Rng rng(77);
  std::vector<RealEvent> evs;
  double signed_mass = 0;
  for (int i = 0; i < 500; ++i) {
    int p = rng.uniform() < 0.5 ? 1 : -1;
    evs.push_back({rng.uniform(1.0, 14.0), rng.uniform(1.0, 14.0), rng.uniform_int(0, 1000), p});
    signed_mass += p;
  }
  std::sort(evs.begin(), evs.end(), [](auto& a, auto& b) { return a.t < b.t; });
  EventVolume v = build_volume(evs, 16, 16, 4, 0, 1000);
  double got = 0;
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) got += v.at(3, y, x);
  REQUIRE(got == Catch::Approx(signed_mass).margin(1e-9));
}

TEST_CASE("nesting: bin difference equals the volume of the strictly-between events") {
  auto evs = random_events(51, 800, 10, 10, 0, 5000);
  int64_t bins = 5;
  EventVolume v = build_volume(evs, 10, 10, bins, 0, 5000);
  for (int64_t c = 1; c < bins; ++c) {
    std::vector<RealEvent> between;
    for (const RealEvent& e : evs) {
      double cs = scaled_timestamp(e.t, 0, 5000, bins);
      if (static_cast<double>(c - 1) < cs && cs <= static_cast<double>(c)) between.push_back(e);
    }
    EventVolume diff = build_volume(between, 10, 10, bins, 0, 5000);
    for (int64_t y = 0; y < 10; ++y)
      for (int64_t x = 0; x < 10; ++x)
        REQUIRE(v.at(c, y, x) - v.at(c - 1, y, x) ==
                Catch::Approx(diff.at(c, y, x)).margin(1e-12));
  }
}

TEST_CASE("build_volume is additive over disjoint event subsets") {
  auto evs = random_events(61, 400, 10, 10, 0, 2000);
  std::vector<RealEvent> a(evs.begin(), evs.begin() + 150), b(evs.begin() + 150, evs.end());
  EventVolume va = build_volume(a, 10, 10, 3, 0, 2000);
  EventVolume vb = build_volume(b, 10, 10, 3, 0, 2000);
  EventVolume vall = build_volume(evs, 10, 10, 3, 0, 2000);
  for (int64_t i = 0; i < vall.data.numel(); ++i)
    REQUIRE(vall.data[i] == Catch::Approx(va.data[i] + vb.data[i]).margin(1e-12));
}

TEST_CASE("empty stream yields an all-zero volume") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  EventVolume v = build_volume(s, 4);
  for (int64_t i = 0; i < v.data.numel(); ++i) REQUIRE(v.data[i] == 0.0);
}

TEST_CASE("border bilinear mass is discarded, not clamped") {
  std::vector<RealEvent> evs{{-0.5, 2.0, 10, +1}};  // half the mass lands off-grid
  EventVolume v = build_volume(evs, 8, 8, 1, 0, 10);
  double total = 0;
  for (int64_t i = 0; i < v.data.numel(); ++i) total += v.data[i];
  REQUIRE(total == 0.5);
  REQUIRE(v.at(0, 2, 0) == 0.5);
}

// --- tokenizer ---

TEST_CASE("tokenize: all-zero volume with zero encodings gives all-zero tokens") {
  Rng rng(1);
  TokenizerParams tp = make_tokenizer_params_raw(4, 2, 3, 2, 2, rng);  // patch=4, T=2, D=3, grid 2x2
  tp.pos_spatial.mutable_value() = Tensor(tp.pos_spatial.shape());
  tp.pos_temporal.mutable_value() = Tensor(tp.pos_temporal.shape());
  tp.proj_b.mutable_value() = Tensor(tp.proj_b.shape());
  EventVolume v;
  v.data = Tensor({2, 8, 8});
  v.bins = 2;
  v.height = 8;
  v.width = 8;
  TokenGrid g = tokenize(v, 4, tp);
  for (int64_t i = 0; i < g.tokens.value().numel(); ++i) REQUIRE(g.tokens.value()[i] == 0.0);
}

TEST_CASE("tokenize: H=W=patch gives a 1x1 token grid per bin") {
  Rng rng(2);
  TokenizerParams tp = make_tokenizer_params_raw(8, 3, 5, 1, 1, rng);
  EventVolume v;
  v.data = rng.normal_tensor({3, 8, 8}, 1.0);
  v.bins = 3;
  v.height = 8;
  v.width = 8;
  TokenGrid g = tokenize(v, 8, tp);
  REQUIRE(g.grid_h == 1);
  REQUIRE(g.grid_w == 1);
  REQUIRE(g.bins == 3);
  REQUIRE(g.tokens.value().shape() == Shape{3, 5});
}

TEST_CASE("tokenize: linear in the volume with encodings disabled") {
  Rng rng(3);
  TokenizerParams tp = make_tokenizer_params_raw(4, 2, 6, 3, 3, rng);
  tp.pos_spatial.mutable_value() = Tensor(tp.pos_spatial.shape());
  tp.pos_temporal.mutable_value() = Tensor(tp.pos_temporal.shape());
  tp.proj_b.mutable_value() = Tensor(tp.proj_b.shape());
  EventVolume v;
  v.data = rng.normal_tensor({2, 12, 12}, 1.0);
  v.bins = 2;
  v.height = 12;
  v.width = 12;
  TokenGrid g1 = tokenize(v, 4, tp);
  EventVolume v2 = v;
  for (int64_t i = 0; i < v2.data.numel(); ++i) v2.data[i] *= 2.0;
  TokenGrid g2 = tokenize(v2, 4, tp);
  for (int64_t i = 0; i < g1.tokens.value().numel(); ++i)
    REQUIRE(g2.tokens.value()[i] == Catch::Approx(2.0 * g1.tokens.value()[i]).margin(1e-12));
}

TEST_CASE("tokenize: zero padding for non-divisible sizes") {
  Rng rng(4);
  TokenizerParams tp = make_tokenizer_params_raw(8, 1, 4, 2, 2, rng);
  EventVolume v;
  v.data = rng.normal_tensor({1, 10, 13}, 1.0);
  v.bins = 1;
  v.height = 10;
  v.width = 13;
  TokenGrid g = tokenize(v, 8, tp);
  REQUIRE(g.grid_h == 2);  // ceil(10/8)
  REQUIRE(g.grid_w == 2);  // ceil(13/8)
}
