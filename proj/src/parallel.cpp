#include "hpcf/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace hpcf {

namespace {

int clamp_threads(int n) {
  if (n <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    n = hw == 0 ? 1 : static_cast<int>(hw);
    n = std::min(n, 4);
  }
  return std::max(n, 1);
}

int g_threads = clamp_threads(0);

}  // namespace

void set_num_threads(int n) { g_threads = clamp_threads(n); }

int num_threads() { return g_threads; }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  const std::int64_t total = end - begin;
  if (total <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(g_threads, total));
  if (workers == 1) {
    body(begin, end);
    return;
  }
  const std::int64_t chunk = (total + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int t = 1; t < workers; ++t) {
    const std::int64_t lo = begin + chunk * t;
    const std::int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(begin, std::min(end, begin + chunk));
  for (auto& th : pool) th.join();
}

}  // namespace hpcf
