#pragma once

#include <functional>

namespace emodir {

// Worker count: min(EMODIR_THREADS, hardware concurrency), at least 1.
int max_threads();

// Runs fn(i) for i in [0, n). Work items must be independent; results must
// not depend on execution order (callers write to disjoint slots).
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace emodir
