#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace persiland {

/// Runs body(begin, end) over a static contiguous partition of [begin, end).
///
/// Each worker owns a disjoint index range, so callers that write only to
/// slices indexed by their range produce bit-identical results for any
/// thread count. With num_threads <= 1 the body runs inline.
template <typename Body>
void parallel_for(int begin, int end, int num_threads, Body&& body) {
  const int count = end - begin;
  if (count <= 0) return;
  if (num_threads <= 1 || count == 1) {
    body(begin, end);
    return;
  }
  const int workers = std::min(num_threads, count);
  const int chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int lo = begin + w * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace persiland
