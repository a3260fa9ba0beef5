#include <wvcal/parallel.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace wvcal
{
std::size_t default_worker_count()
{
        if (const char* env = std::getenv("WVCAL_THREADS"))
        {
                try
                {
                        const long v = std::stol(env);
                        if (v > 0)
                        {
                                return static_cast<std::size_t>(v);
                        }
                }
                catch (const std::exception&)
                {
                }
        }
        return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body)
{
        workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
        if (workers == 1)
        {
                for (std::size_t i = 0; i < count; ++i)
                {
                        body(i);
                }
                return;
        }

        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;

        auto run = [&]
        {
                for (std::size_t i = next++; i < count; i = next++)
                {
                        try
                        {
                                body(i);
                        }
                        catch (...)
                        {
                                const std::lock_guard lock(error_mutex);
                                if (!error)
                                {
                                        error = std::current_exception();
                                }
                                next = count;
                        }
                }
        };

        std::vector<std::jthread> threads;
        threads.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w)
        {
                threads.emplace_back(run);
        }
        run();
        threads.clear();

        if (error)
        {
                std::rethrow_exception(error);
        }
}
}
