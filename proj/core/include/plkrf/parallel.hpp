#pragma once

#include <cstddef>
#include <functional>

namespace plkrf {

// Process-wide worker count. 1 is reference mode; every parallel region in
// this library writes disjoint outputs, so results are bit-identical for any
// worker count.
int worker_count();
void set_worker_count(int workers);
int hardware_worker_count();

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on the pool.
// Runs inline when workers == 1 or n is small.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace plkrf
