#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "evmatch/events.hpp"

namespace evmatch {

// EVT1 file format (little-endian, bit-exact):
//   magic "EVT1" (4 bytes) | width u32 | height u32 | count u64
//   count records of { x u16 | y u16 | t i64 (ns) | p i8 | pad i8 = 0 }
// Record size is 14 bytes.
inline constexpr size_t kEvt1HeaderSize = 4 + 4 + 4 + 8;
inline constexpr size_t kEvt1RecordSize = 14;

inline void write_events(const EventStream& s, const std::string& path) {
  s.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "write_events: cannot open " + path);
  f.write("EVT1", 4);
  uint32_t w = s.width, h = s.height;
  uint64_t count = s.events.size();
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&count), 8);
  char rec[kEvt1RecordSize];
  for (const Event& e : s.events) {
    std::memcpy(rec + 0, &e.x, 2);
    std::memcpy(rec + 2, &e.y, 2);
    std::memcpy(rec + 4, &e.t, 8);
    rec[12] = static_cast<char>(e.p);
    rec[13] = 0;
    f.write(rec, kEvt1RecordSize);
  }
  require(f.good(), "write_events: I/O failure writing " + path);
}

inline EventStream read_events(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_events: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "EVT1", 4) == 0, "read_events: bad magic in " + path);
  EventStream s;
  uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&s.width), 4);
  f.read(reinterpret_cast<char*>(&s.height), 4);
  f.read(reinterpret_cast<char*>(&count), 8);
  require(f.good(), "read_events: truncated header in " + path);
  s.events.resize(count);
  char rec[kEvt1RecordSize];
  for (uint64_t i = 0; i < count; ++i) {
    f.read(rec, kEvt1RecordSize);
    require(f.good(), "read_events: truncated payload at record " + std::to_string(i) + " in " + path);
    Event& e = s.events[i];
    std::memcpy(&e.x, rec + 0, 2);
    std::memcpy(&e.y, rec + 2, 2);
    std::memcpy(&e.t, rec + 4, 8);
    e.p = static_cast<int8_t>(rec[12]);
  }
  int64_t bad = s.first_invalid_index();
  require(bad < 0, "read_events: invalid or unsorted record at index " + std::to_string(bad) +
                       " in " + path);
  return s;
}

}  // namespace evmatch
