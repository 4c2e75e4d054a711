#pragma once

namespace trajlab {

// Scalar type of the numeric core. The default build is float; configuring
// with TRAJLAB_FP64 switches to double, which exists for the strict
// finite-difference gradient checks.
#ifdef TRAJLAB_FP64
using real = double;
#else
using real = float;
#endif

constexpr int kRealBytes = static_cast<int>(sizeof(real));

} // namespace trajlab
