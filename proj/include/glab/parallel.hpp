#pragma once

#include <cstddef>
#include <functional>

namespace glab {

// GLAB_THREADS override, else hardware concurrency, at least 1.
std::size_t worker_count();

// Static block partition of [0, n) over worker_count() threads. The callback
// must only touch index-owned state; results stay deterministic because each
// index does identical work regardless of the thread it lands on.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace glab
