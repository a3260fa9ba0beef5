#include <wvcal/kernels.hpp>

#include <arm_neon.h>

namespace wvcal::kernels::detail
{
namespace
{
double sum_squared_gaps_neon(const double* w, std::size_t n, std::size_t lag)
{
        float64x2_t acc0 = vdupq_n_f64(0);
        float64x2_t acc1 = vdupq_n_f64(0);
        std::size_t t = 0;
        for (; t + 4 <= n; t += 4)
        {
                const float64x2_t d0 = vsubq_f64(vld1q_f64(w + t + lag), vld1q_f64(w + t));
                const float64x2_t d1 = vsubq_f64(vld1q_f64(w + t + 2 + lag), vld1q_f64(w + t + 2));
                acc0 = vfmaq_f64(acc0, d0, d0);
                acc1 = vfmaq_f64(acc1, d1, d1);
        }
        double tail = 0;
        for (; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                tail += d * d;
        }
        return ((vgetq_lane_f64(acc0, 0) + vgetq_lane_f64(acc0, 1)) + (vgetq_lane_f64(acc1, 0) + vgetq_lane_f64(acc1, 1)))
               + tail;
}

void squared_gaps_neon(const double* w, std::size_t n, std::size_t lag, double* out)
{
        std::size_t t = 0;
        for (; t + 2 <= n; t += 2)
        {
                const float64x2_t d = vsubq_f64(vld1q_f64(w + t + lag), vld1q_f64(w + t));
                vst1q_f64(out + t, vmulq_f64(d, d));
        }
        for (; t < n; ++t)
        {
                const double d = w[t + lag] - w[t];
                out[t] = d * d;
        }
}
}

const KernelTable NEON_TABLE = {&sum_squared_gaps_neon, &squared_gaps_neon};
}
