#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "xpd/rng.hpp"
#include "xpd/scene.hpp"

namespace xpd::scene {

LabelMap corrupt_boundaries(const LabelMap& labels, int radius, uint64_t seed) {
  if (radius < 0) throw ConfigError("corrupt_boundaries: radius must be >= 0");
  if (2 * radius > std::min(labels.rows(), labels.cols()))
    throw ConfigError("corrupt_boundaries: radius " + std::to_string(radius) +
                      " exceeds half the smaller image dimension");
  if (radius == 0 || labels.empty()) return labels;

  // Low-frequency displacement: uniform random vectors in [-r, r]^2 on a
  // coarse lattice, bilinearly interpolated. Interpolation is a convex
  // combination, so every pixel keeps |d|_inf <= r.
  const int spacing = std::max(8, 4 * radius);
  const int gr = labels.rows() / spacing + 2, gc = labels.cols() / spacing + 2;
  Rng rng(Rng::mix(seed, 0xc0441));
  Grid2<double> lat_dy(gr, gc), lat_dx(gr, gc);
  for (size_t i = 0; i < lat_dy.size(); ++i) {
    lat_dy[i] = rng.uniform(-radius, radius);
    lat_dx[i] = rng.uniform(-radius, radius);
  }

  LabelMap out(labels.rows(), labels.cols());
  for (int r = 0; r < labels.rows(); ++r) {
    const double fy = static_cast<double>(r) / spacing;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int c = 0; c < labels.cols(); ++c) {
      const double fx = static_cast<double>(c) / spacing;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      auto lerp = [&](const Grid2<double>& g) {
        return (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x0 + 1)) +
               ty * ((1 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
      };
      const int dy = std::clamp(static_cast<int>(std::lround(lerp(lat_dy))), -radius, radius);
      const int dx = std::clamp(static_cast<int>(std::lround(lerp(lat_dx))), -radius, radius);
      out(r, c) = labels.clamped(r + dy, c + dx);
    }
  }

  // An instance thinner than the displacement can vanish; restore its original
  // pixels. Restoring can in turn erase another id, so repeat until stable
  // (it converges to the input in the worst case).
  const std::set<int32_t> before(labels.values().begin(), labels.values().end());
  for (;;) {
    const std::set<int32_t> after(out.values().begin(), out.values().end());
    bool changed = false;
    for (int32_t id : before)
      if (!after.count(id)) {
        for (size_t i = 0; i < labels.size(); ++i)
          if (labels[i] == id) out[i] = id;
        changed = true;
      }
    if (!changed) break;
  }
  return out;
}

}  // namespace xpd::scene
