#pragma once

#include <cstdint>

namespace fsvfm {

// Named scalar losses of one optimization step. Components that are not
// active in a given objective stay at zero.
struct LossReport {
  double rec_m = 0.0;
  double rec_fr = 0.0;
  double sim = 0.0;
  double task = 0.0;
  double rac = 0.0;
  double total = 0.0;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
};

}  // namespace fsvfm
