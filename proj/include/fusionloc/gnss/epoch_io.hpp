#pragma once

#include "fusionloc/gnss/rtk.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace fusionloc::gnss {

// Text format, one block per epoch:
//   epoch <t> <n_sats> <base_x> <base_y> <base_z>
//   sat <id> <x> <y> <z> <sd_range> <sd_phase> <wavelength> <elevation>
// Lines starting with '#' are comments.

inline void write_epochs(std::ostream& os, const std::vector<GnssEpoch>& epochs) {
  os << "# t n base_x base_y base_z / id x y z sd_range sd_phase wavelength elevation\n";
  os << std::setprecision(17);
  for (const auto& e : epochs) {
    os << "epoch " << e.t << ' ' << e.sats.size() << ' ' << e.base_ecef.x() << ' ' << e.base_ecef.y() << ' '
       << e.base_ecef.z() << '\n';
    for (const auto& s : e.sats)
      os << "sat " << s.id << ' ' << s.sat_ecef.x() << ' ' << s.sat_ecef.y() << ' ' << s.sat_ecef.z() << ' '
         << s.sd_range << ' ' << s.sd_phase << ' ' << s.wavelength << ' ' << s.elevation << '\n';
  }
}

inline std::vector<GnssEpoch> read_epochs(std::istream& is) {
  std::vector<GnssEpoch> out;
  std::string line;
  std::size_t expected = 0;
  int lineno = 0;
  auto bad = [&](const char* what) {
    fail(ErrorKind::input, "gnss epoch file line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "epoch") {
      if (!out.empty() && out.back().sats.size() != expected) bad("satellite count mismatch");
      GnssEpoch e;
      if (!(ls >> e.t >> expected >> e.base_ecef.x() >> e.base_ecef.y() >> e.base_ecef.z())) bad("malformed epoch");
      if (!out.empty() && !(e.t > out.back().t)) bad("epoch times must increase");
      out.push_back(std::move(e));
    } else if (tag == "sat") {
      if (out.empty()) bad("satellite before epoch");
      SatObs s;
      if (!(ls >> s.id >> s.sat_ecef.x() >> s.sat_ecef.y() >> s.sat_ecef.z() >> s.sd_range >> s.sd_phase >>
            s.wavelength >> s.elevation))
        bad("malformed satellite record");
      out.back().sats.push_back(s);
    } else {
      bad("unknown record");
    }
  }
  if (!out.empty() && out.back().sats.size() != expected) bad("satellite count mismatch");
  for (const auto& e : out) validate_epoch(e);
  return out;
}

inline void save_epochs(const std::string& path, const std::vector<GnssEpoch>& epochs) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::input, "cannot write " + path);
  write_epochs(os, epochs);
}

inline std::vector<GnssEpoch> load_epochs(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::input, "cannot open " + path);
  return read_epochs(is);
}

}  // namespace fusionloc::gnss
