#include <wvcal/kernels.hpp>

namespace wvcal::kernels::detail
{
namespace
{
// Four interleaved accumulators so the summation order matches the 4-lane
// SIMD kernels up to the final horizontal reduction.
double sum_squared_gaps_scalar(const double* w, std::size_t n, std::size_t lag)
{
        double acc[4] = {0, 0, 0, 0};
        std::size_t t = 0;
        for (; t + 4 <= n; t += 4)
        {
                for (std::size_t k = 0; k < 4; ++k)
                {
                        const double d = w[t + k + lag] - w[t + k];
                        acc[k] += d * d;
                }
        }
        double tail = 0;
        for (; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                tail += d * d;
        }
        return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
}

void squared_gaps_scalar(const double* w, std::size_t n, std::size_t lag, double* out)
{
        for (std::size_t t = 0; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                out[t] = d * d;
        }
}
}

const KernelTable SCALAR_TABLE = {&sum_squared_gaps_scalar, &squared_gaps_scalar};
}
