#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hop/grid.hpp"
#include "hop/hand_model.hpp"
#include "hop/math.hpp"

namespace hop::test {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline HandPose random_pose(std::mt19937_64& rng, const JointLimits& lim = {}, double shrink = 0.0) {
  HandPose p;
  for (int d = 0; d < kPoseDofs; ++d)
    p.theta[d] = HandPose::is_abduction(d) ? uniform(rng, lim.abduction_min + shrink, lim.abduction_max - shrink)
                                           : uniform(rng, lim.flexion_min + shrink, lim.flexion_max - shrink);
  return p;
}

/// Smooth band-limited field in [-0.9, 0.9] on every channel.
inline VoxelGrid smooth_grid(const GridSpec& spec, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  VoxelGrid g(spec, channels);
  for (int c = 0; c < channels; ++c) {
    Vec3 f[3];
    double ph[3], amp[3];
    for (int m = 0; m < 3; ++m) {
      f[m] = random_vec(rng, -3.0, 3.0);
      ph[m] = uniform(rng, 0.0, 6.28);
      amp[m] = uniform(rng, 0.1, 0.3);
    }
    for (int k = 0; k < spec.dims[2]; ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          const Vec3 x = spec.center_normalized(i, j, k);
          double v = 0.0;
          for (int m = 0; m < 3; ++m) v += amp[m] * std::sin(f[m].dot(x) + ph[m]);
          g.at(c, i, j, k) = v;
        }
  }
  return g;
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace hop::test
