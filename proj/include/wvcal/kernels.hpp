#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

// Inner loops of the Allan variance estimator. Each kernel has a scalar
// reference and optional SIMD variants; one is selected at startup from the
// CPU features and can be pinned for equivalence testing.
namespace wvcal::kernels
{
enum class Backend
{
        Scalar,
        Avx2,
        Neon,
};

std::string_view backend_name(Backend b);
[[nodiscard]] bool backend_available(Backend b);
[[nodiscard]] Backend active_backend();
// Throws DomainError when the backend is not compiled in or not supported by the CPU.
void force_backend(Backend b);
// Back to automatic selection (WVCAL_SIMD env var, then CPU features).
void reset_backend();

// sum_{t < n} (w[t + lag] - w[t])^2 with n = w.size() - lag.
double sum_squared_gaps(std::span<const double> w, std::size_t lag);

// out[t] = (w[t + lag] - w[t])^2, out.size() = w.size() - lag.
void squared_gaps(std::span<const double> w, std::size_t lag, std::span<double> out);

namespace detail
{
struct KernelTable
{
        double (*sum_squared_gaps)(const double* w, std::size_t n, std::size_t lag);
        void (*squared_gaps)(const double* w, std::size_t n, std::size_t lag, double* out);
};

extern const KernelTable SCALAR_TABLE;
#if defined(WVCAL_BUILD_AVX2)
extern const KernelTable AVX2_TABLE;
#endif
#if defined(WVCAL_BUILD_NEON)
extern const KernelTable NEON_TABLE;
#endif
}
}
