#include <wvcal/error.hpp>
#include <wvcal/random.hpp>
#include <wvcal/simulate.hpp>

#include <cmath>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace wvcal
{
namespace
{
void check_config(const SimConfig& config)
{
        if (config.length < 8)
        {
                throw DomainError("simulated length must be at least 8 samples");
        }
        if (!(config.sample_rate_hz > 0))
        {
                throw DomainError("sample rate must be positive");
        }
        if (config.model.size() == 0)
        {
                throw DomainError("model has no active process");
        }
        if (config.model.active(Process::BI))
        {
                throw DomainError("bias instability (BI) cannot be simulated; it is supported for fitting only");
        }
}

std::vector<double> white_noise(std::size_t n, double variance, Engine& engine)
{
        boost::random::normal_distribution<double> normal(0.0, std::sqrt(variance));
        std::vector<double> x(n);
        for (double& v : x)
        {
                v = normal(engine);
        }
        return x;
}

std::vector<double> quantization_noise(std::size_t n, double q2, Engine& engine)
{
        // AV of a * (u_t - u_{t-1}) at half-window m is 3 a^2 Var(u) / m^2; Var(u) = 1/3.
        boost::random::uniform_real_distribution<double> uniform(-1.0, 1.0);
        const double a = std::sqrt(3.0 * q2);
        std::vector<double> x(n);
        double prev = uniform(engine);
        for (double& v : x)
        {
                const double u = uniform(engine);
                v = a * (u - prev);
                prev = u;
        }
        return x;
}

std::vector<double> random_walk(std::size_t n, double gamma2, Engine& engine)
{
        // Each sample is the average of a Brownian path W over one sample period:
        //   x_t = W_{t-1} + e_t / 2 + r_t,  e_t ~ N(0, g^2),  r_t ~ N(0, g^2 / 12),
        // with W_t = W_{t-1} + e_t. Its Allan variance is exactly g^2 m / 3.
        boost::random::normal_distribution<double> increment(0.0, std::sqrt(gamma2));
        boost::random::normal_distribution<double> bridge(0.0, std::sqrt(gamma2 / 12.0));
        std::vector<double> x(n);
        double level = 0;
        for (double& v : x)
        {
                const double e = increment(engine);
                v = level + 0.5 * e + bridge(engine);
                level += e;
        }
        return x;
}

std::vector<double> drift(std::size_t n, double omega)
{
        std::vector<double> x(n);
        for (std::size_t t = 0; t < n; ++t)
        {
                x[t] = omega * static_cast<double>(t + 1);
        }
        return x;
}

std::vector<double> component(Process p, const SimConfig& config)
{
        Engine engine(component_seed(config.seed, p));
        const double v = config.model.get(p);
        switch (p)
        {
        case Process::QN:
                return quantization_noise(config.length, v, engine);
        case Process::WN:
                return white_noise(config.length, v, engine);
        case Process::RW:
                return random_walk(config.length, v, engine);
        case Process::DR:
                return drift(config.length, v);
        case Process::BI:
                break;
        }
        throw DomainError("process cannot be simulated");
}
}

std::uint64_t component_seed(std::uint64_t seed, Process p)
{
        return derive_seed(seed, {0xc0, static_cast<std::uint64_t>(p)});
}

std::map<Process, Signal> simulate_components(const SimConfig& config)
{
        check_config(config);
        std::map<Process, Signal> res;
        for (Process p : config.model.active_processes())
        {
                res.emplace(p, Signal{component(p, config), config.sample_rate_hz});
        }
        return res;
}

Signal simulate(const SimConfig& config)
{
        check_config(config);
        Signal res{std::vector<double>(config.length, 0.0), config.sample_rate_hz};
        // Canonical order so the sum is reproducible from the components.
        for (Process p : config.model.active_processes())
        {
                const std::vector<double> c = component(p, config);
                for (std::size_t t = 0; t < config.length; ++t)
                {
                        res.values[t] += c[t];
                }
        }
        return res;
}
}
