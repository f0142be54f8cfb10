// SPDX-License-Identifier: Apache-2.0
#include "d2quant/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace d2quant {

int thread_budget() {
  static const int budget = [] {
    if (const char* env = std::getenv("D2Q_THREADS")) {
      try {
        const int n = std::stoi(env);
        if (n > 0) return n;
      } catch (...) {
        // fall through to auto
      }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return budget;
}

void parallel_for(std::size_t count, std::size_t min_per_thread,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  const std::size_t grain = std::max<std::size_t>(1, min_per_thread);
  std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(thread_budget()), count / grain);
  if (workers <= 1) {
    body(0, count);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace d2quant
