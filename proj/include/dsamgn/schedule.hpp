#pragma once

#include <cstddef>
#include <vector>

namespace dsamgn {

enum class ScheduleKind { Cosine, Step };

/// Linear warm-up from lr_start to base_lr over warmup_iters, then either
/// cosine decay to lr_min at total_iters or step decay by `gamma` at each
/// milestone (iterations).
struct LrSchedule {
  double base_lr = 3.5e-4;
  double lr_start = 3.5e-6;
  double lr_min = 0.0;
  std::size_t warmup_iters = 0;
  std::size_t total_iters = 1;
  ScheduleKind kind = ScheduleKind::Cosine;
  std::vector<std::size_t> milestones;
  double gamma = 0.1;
};

double warmup_schedule(std::size_t iter, const LrSchedule& s);

}  // namespace dsamgn
