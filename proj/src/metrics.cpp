#include "lupindp/metrics.hpp"

#include <cstdio>

namespace lupindp {

void write_calibration_csv(const std::filesystem::path& path, const CalibrationCurve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "level,empirical_frequency\n";
  char buf[96];
  for (Index j = 0; j < curve.levels.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", curve.levels(j), curve.frequencies(j));
    os << buf;
  }
}

}  // namespace lupindp
