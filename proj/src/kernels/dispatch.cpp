#include <wvcal/error.hpp>
#include <wvcal/kernels.hpp>

#include <atomic>
#include <cstdlib>
#include <string>

namespace wvcal::kernels
{
namespace
{
bool cpu_supports(Backend b)
{
        switch (b)
        {
        case Backend::Scalar:
                return true;
        case Backend::Avx2:
#if defined(WVCAL_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
                return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
                return false;
#endif
        case Backend::Neon:
#if defined(WVCAL_BUILD_NEON)
                return true;
#else
                return false;
#endif
        }
        return false;
}

const detail::KernelTable& table_for(Backend b)
{
        switch (b)
        {
#if defined(WVCAL_BUILD_AVX2)
        case Backend::Avx2:
                return detail::AVX2_TABLE;
#endif
#if defined(WVCAL_BUILD_NEON)
        case Backend::Neon:
                return detail::NEON_TABLE;
#endif
        default:
                return detail::SCALAR_TABLE;
        }
}

Backend detect()
{
        if (const char* env = std::getenv("WVCAL_SIMD"))
        {
                const std::string v(env);
                if (v == "scalar")
                {
                        return Backend::Scalar;
                }
        }
        if (cpu_supports(Backend::Avx2))
        {
                return Backend::Avx2;
        }
        if (cpu_supports(Backend::Neon))
        {
                return Backend::Neon;
        }
        return Backend::Scalar;
}

std::atomic<Backend>& current()
{
        static std::atomic<Backend> backend{detect()};
        return backend;
}
}

std::string_view backend_name(Backend b)
{
        switch (b)
        {
        case Backend::Scalar:
                return "scalar";
        case Backend::Avx2:
                return "avx2";
        case Backend::Neon:
                return "neon";
        }
        return "?";
}

bool backend_available(Backend b)
{
        return cpu_supports(b);
}

Backend active_backend()
{
        return current().load(std::memory_order_relaxed);
}

void force_backend(Backend b)
{
        if (!cpu_supports(b))
        {
                throw DomainError("SIMD backend " + std::string(backend_name(b)) + " is not available");
        }
        current().store(b, std::memory_order_relaxed);
}

void reset_backend()
{
        current().store(detect(), std::memory_order_relaxed);
}

double sum_squared_gaps(std::span<const double> w, std::size_t lag)
{
        if (w.size() <= lag)
        {
                return 0;
        }
        return table_for(active_backend()).sum_squared_gaps(w.data(), w.size() - lag, lag);
}

void squared_gaps(std::span<const double> w, std::size_t lag, std::span<double> out)
{
        if (w.size() <= lag)
        {
                return;
        }
        if (out.size() != w.size() - lag)
        {
                throw DomainError("squared_gaps output has the wrong length");
        }
        table_for(active_backend()).squared_gaps(w.data(), w.size() - lag, lag, out.data());
}
}
