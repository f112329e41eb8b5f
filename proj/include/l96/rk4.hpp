#pragma once

#include "l96/types.hpp"

#include <utility>

namespace l96 {

/// One classical Runge-Kutta step: y + (r1 + 2 r2 + 2 r3 + r4) / 6 with r_i = h f(stage_i).
/// `rhs` must be a pure function Vec -> Vec. Throws BlowupError tagged with
/// `step_index` if the result is not finite.
template <class Rhs>
Vec rk4_step(Rhs&& rhs, const Vec& y, double h, std::size_t step_index = 0) {
  if (!(h > 0.0)) throw ConfigError("rk4_step: step must be positive");
  const Vec r1 = h * rhs(y);
  const Vec r2 = h * rhs(Vec(y + 0.5 * r1));
  const Vec r3 = h * rhs(Vec(y + 0.5 * r2));
  const Vec r4 = h * rhs(Vec(y + r3));
  Vec out = y + (r1 + 2.0 * r2 + 2.0 * r3 + r4) / 6.0;
  if (!out.allFinite()) {
    throw BlowupError("rk4_step: non-finite state", step_index, static_cast<double>(step_index) * h);
  }
  return out;
}

}  // namespace l96
