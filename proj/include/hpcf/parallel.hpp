#pragma once

#include <cstdint>
#include <functional>

namespace hpcf {

/// Sets the worker count for element-level parallelism inside operators.
/// n <= 0 selects the hardware default (capped at 4).
void set_num_threads(int n);
int num_threads();

/// Runs body(lo, hi) over fixed contiguous partitions of [begin, end).
/// Each output element is written by exactly one worker and every per-element
/// reduction stays inside one worker, so results are bitwise identical for
/// any thread count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace hpcf
