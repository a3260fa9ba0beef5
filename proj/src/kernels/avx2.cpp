#include <wvcal/kernels.hpp>

#include <immintrin.h>

namespace wvcal::kernels::detail
{
namespace
{
double sum_squared_gaps_avx2(const double* w, std::size_t n, std::size_t lag)
{
        __m256d acc = _mm256_setzero_pd();
        std::size_t t = 0;
        for (; t + 4 <= n; t += 4)
        {
                const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(w + t + lag), _mm256_loadu_pd(w + t));
                acc = _mm256_fmadd_pd(d, d, acc);
        }
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, acc);
        double tail = 0;
        for (; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                tail += d * d;
        }
        return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail;
}

void squared_gaps_avx2(const double* w, std::size_t n, std::size_t lag, double* out)
{
        std::size_t t = 0;
        for (; t + 4 <= n; t += 4)
        {
                const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(w + t + lag), _mm256_loadu_pd(w + t));
                _mm256_storeu_pd(out + t, _mm256_mul_pd(d, d));
        }
        for (; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                out[t] = d * d;
        }
}
}

const KernelTable AVX2_TABLE = {&sum_squared_gaps_avx2, &squared_gaps_avx2};
}
