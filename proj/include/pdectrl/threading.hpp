#pragma once

#include <functional>

namespace pdectrl {

// Global worker-thread count. Resolution order: explicit set_num_threads()
// (CLI --threads), else PDECTRL_THREADS env var, else hardware concurrency.
int num_threads();
void set_num_threads(int n);

// Runs fn(0..n_tasks-1), distributing tasks over the configured threads.
// Tasks must be independent; each writes only its own output slot, so the
// result is identical for any thread count. With one thread this runs inline.
void parallel_for(int n_tasks, const std::function<void(int)>& fn);

}  // namespace pdectrl
