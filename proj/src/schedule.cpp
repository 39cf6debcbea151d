#include "dsamgn/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dsamgn {

double warmup_schedule(std::size_t iter, const LrSchedule& s) {
  if (iter < s.warmup_iters) {
    const double t = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    return s.lr_start + (s.base_lr - s.lr_start) * t;
  }
  if (s.kind == ScheduleKind::Step) {
    double lr = s.base_lr;
    for (auto m : s.milestones)
      if (iter >= m) lr *= s.gamma;
    return lr;
  }
  if (s.total_iters <= s.warmup_iters) return s.base_lr;
  const double span = static_cast<double>(s.total_iters - s.warmup_iters);
  const double t = std::min(1.0, static_cast<double>(iter - s.warmup_iters) / span);
  return s.lr_min + (s.base_lr - s.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace dsamgn
