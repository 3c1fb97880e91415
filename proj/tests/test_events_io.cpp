#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evmatch/events.hpp"
#include "evmatch/evt1.hpp"
#include "evmatch/pgm.hpp"
#include "evmatch/rng.hpp"

using namespace evmatch;

namespace {

EventStream random_stream(uint64_t seed, size_t n, uint32_t w = 64, uint32_t h = 48) {
  Rng rng(seed);
  EventStream s;
  s.width = w;
  s.height = h;
  int64_t t = 0;
  for (size_t i = 0; i < n; ++i) {
    t += rng.uniform_int(0, 500);  // ties allowed
    s.events.push_back({static_cast<uint16_t>(rng.uniform_int(0, w - 1)),
                        static_cast<uint16_t>(rng.uniform_int(0, h - 1)), t,
                        static_cast<int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
  }
  return s;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("EVT1 round trip on empty stream") {
  TempFile f("evm_empty.evt1");
  EventStream s;
  s.width = 32;
  s.height = 24;
  write_events(s, f.path);
  EventStream r = read_events(f.path);
  REQUIRE(r.empty());
  REQUIRE(r.width == 32);
  REQUIRE(r.height == 24);
  REQUIRE_THROWS_AS(r.t_first(), Error);
}

TEST_CASE("EVT1 round trip is the identity on 10k random sorted events") {
  TempFile f("evm_roundtrip.evt1");
  EventStream s = random_stream(99, 10000);
  write_events(s, f.path);
  EventStream r = read_events(f.path);
  REQUIRE(r.width == s.width);
  REQUIRE(r.height == s.height);
  REQUIRE(r.events.size() == s.events.size());
  for (size_t i = 0; i < s.events.size(); ++i) REQUIRE(r.events[i] == s.events[i]);
}

TEST_CASE("EVT1 file size is exactly header plus records") {
  TempFile f("evm_size.evt1");
  EventStream s = random_stream(1, 1);
  write_events(s, f.path);
  REQUIRE(std::filesystem::file_size(f.path) == kEvt1HeaderSize + kEvt1RecordSize);
}

TEST_CASE("unsorted stream is refused before writing and on read") {
  TempFile f("evm_unsorted.evt1");
  EventStream s = random_stream(5, 8);
  std::swap(s.events[4].t, s.events[5].t);
  if (s.events[5].t == s.events[4].t) s.events[5].t = s.events[4].t - 1;
  REQUIRE_THROWS_WITH(write_events(s, f.path), Catch::Matchers::ContainsSubstring("index 5"));

  // Forge the same bad payload on disk; the reader must name index 5 too.
  EventStream ok = random_stream(5, 8);
  write_events(ok, f.path);
  std::fstream raw(f.path, std::ios::binary | std::ios::in | std::ios::out);
  raw.seekp(static_cast<std::streamoff>(kEvt1HeaderSize + 5 * kEvt1RecordSize + 4));
  int64_t bad_t = ok.events[4].t - 1000;
  raw.write(reinterpret_cast<const char*>(&bad_t), 8);
  raw.close();
  REQUIRE_THROWS_WITH(read_events(f.path), Catch::Matchers::ContainsSubstring("index 5"));
}

TEST_CASE("bad magic and truncated payload are reported distinctly") {
  TempFile f("evm_bad.evt1");
  {
    std::ofstream bad(f.path, std::ios::binary);
    bad << "NOPE1234";
  }
  REQUIRE_THROWS_WITH(read_events(f.path), Catch::Matchers::ContainsSubstring("magic"));
  EventStream s = random_stream(2, 4);
  write_events(s, f.path);
  std::filesystem::resize_file(f.path, kEvt1HeaderSize + 2 * kEvt1RecordSize + 3);
  REQUIRE_THROWS_WITH(read_events(f.path), Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("slice_window equals the linear-scan oracle") {
  EventStream s = random_stream(123, 2000);
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t t0 = rng.uniform_int(-1000, s.t_last() + 1000);
    int64_t dur = rng.uniform_int(1, 200000);
    EventStream got = slice_window(s, t0, dur);
    std::vector<Event> want;
    for (const Event& e : s.events)
      if (e.t >= t0 && e.t < t0 + dur) want.push_back(e);
    REQUIRE(got.events.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) REQUIRE(got.events[i] == want[i]);
  }
}

TEST_CASE("slice_window identity, emptiness, nesting, and coverage") {
  EventStream s = random_stream(17, 500);
  SECTION("full-range window is identity") {
    EventStream w = slice_window(s, s.t_first(), s.t_last() - s.t_first() + 1);
    REQUIRE(w.events.size() == s.events.size());
  }
  SECTION("window past t_last is empty") {
    REQUIRE(slice_window(s, s.t_last() + 1, 100).empty());
  }
  SECTION("nested windows compose") {
    int64_t a = s.t_first() + 100;
    EventStream w1 = slice_window(s, a, 50000);
    EventStream w2 = slice_window(w1, a, 20000);
    EventStream direct = slice_window(s, a, 20000);
    REQUIRE(w2.events.size() == direct.events.size());
    for (size_t i = 0; i < w2.events.size(); ++i) REQUIRE(w2.events[i] == direct.events[i]);
  }
  SECTION("adjacent windows concatenate to the full stream") {
    int64_t span = s.t_last() + 1 - s.t_first();
    int64_t step = span / 7 + 1;
    std::vector<Event> collected;
    for (int64_t t0 = s.t_first(); t0 < s.t_first() + span; t0 += step) {
      EventStream w = slice_window(s, t0, step);
      collected.insert(collected.end(), w.events.begin(), w.events.end());
    }
    REQUIRE(collected.size() == s.events.size());
    for (size_t i = 0; i < collected.size(); ++i) REQUIRE(collected[i] == s.events[i]);
  }
  SECTION("zero duration rejected") {
    REQUIRE_THROWS_AS(slice_window(s, 0, 0), Error);
  }
}

TEST_CASE("PGM/PPM round trip") {
  TempFile f("evm_img.pgm");
  Rng rng(3);
  ImageU8 img;
  img.width = 17;
  img.height = 9;
  img.channels = 1;
  img.pixels.resize(17 * 9);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  write_pnm(img, f.path);
  ImageU8 r = read_pnm(f.path);
  REQUIRE(r.width == img.width);
  REQUIRE(r.height == img.height);
  REQUIRE(r.pixels == img.pixels);
}
