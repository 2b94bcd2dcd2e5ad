// Compiled with -ffast-math (see CMakeLists) so the loop lowers to the
// vectorized libm entry points. Only whole-array transcendentals live here;
// everything that affects accumulation order stays in regular TUs.

#include <cmath>

namespace pdectrl {

void tanh_array(const double* in, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
}

}  // namespace pdectrl
