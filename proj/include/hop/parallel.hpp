#pragma once

#include <cstddef>
#include <functional>

namespace hop {

/// Number of worker threads used by internal loops. 0 selects all cores.
void set_thread_count(unsigned count);
unsigned thread_count();

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks never share
/// output slots, so results do not depend on the thread count as long as the
/// body writes only to indices inside its own chunk.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace hop
