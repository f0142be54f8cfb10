// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace d2quant {

// Worker count for internal parallel loops. The D2Q_THREADS environment
// variable caps it; 0 or unset means hardware concurrency. Read once per
// process.
int thread_budget();

// Runs body(begin, end) over disjoint contiguous chunks of [0, count).
// Every index is handled by exactly one worker in ascending order inside its
// chunk, so outputs are independent of the thread count.
void parallel_for(std::size_t count, std::size_t min_per_thread,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace d2quant
