#pragma once

#include <functional>

namespace dform {

/// Worker count: DFORM_THREADS if set (>= 1), otherwise the hardware concurrency.
int worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index runs exactly
/// once; nested calls from inside a worker run inline. Results must be written to per-index
/// slots so the outcome does not depend on scheduling. The first exception thrown by any body
/// is rethrown after all workers stop.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace dform
