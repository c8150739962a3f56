#pragma once

namespace opqn {

/// Number of worker threads used by the OpenMP kernels (0 = hardware default).
/// All kernels partition work over independent outputs and keep inner sums in
/// a fixed order, so results are bit-identical for every thread count.
void set_threads(int n);
int max_threads();

}  // namespace opqn
