#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evmatch/tensor.hpp"

namespace evmatch {

// One correspondence in input-resolution pixels.
struct PixelMatch {
  double ax = 0, ay = 0, bx = 0, by = 0;
  double confidence = 0;
};

// Match file: '#'-prefixed "key value" header lines, then one match per
// line as "xA yA xB yB confidence".
inline void write_matches(const std::vector<PixelMatch>& matches,
                          const std::map<std::string, std::string>& header,
                          const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "write_matches: cannot open " + path);
  f.precision(10);
  for (const auto& [k, v] : header) f << "# " << k << " " << v << "\n";
  for (const PixelMatch& m : matches)
    f << m.ax << " " << m.ay << " " << m.bx << " " << m.by << " " << m.confidence << "\n";
  require(f.good(), "write_matches: write failed " + path);
}

struct MatchFile {
  std::vector<PixelMatch> matches;
  std::map<std::string, std::string> header;
};

inline MatchFile read_matches(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "read_matches: cannot open " + path);
  MatchFile out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      out.header[key] = value;
      continue;
    }
    std::istringstream is(line);
    PixelMatch m;
    is >> m.ax >> m.ay >> m.bx >> m.by >> m.confidence;
    require(!is.fail(), "read_matches: malformed line " + std::to_string(lineno) + " in " + path);
    out.matches.push_back(m);
  }
  return out;
}

}  // namespace evmatch
