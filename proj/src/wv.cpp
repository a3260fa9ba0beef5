#include <wvcal/error.hpp>
#include <wvcal/kernels.hpp>
#include <wvcal/parallel.hpp>
#include <wvcal/random.hpp>
#include <wvcal/wv.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <cmath>
#include <sstream>

namespace wvcal
{
namespace
{
void check_signal(const Signal& signal, const ScaleGrid& grid)
{
        if (grid.sample_count() != signal.size())
        {
                std::ostringstream os;
                os << "scale grid was built for " << grid.sample_count() << " samples but the signal has "
                   << signal.size();
                throw RankError(os.str());
        }
        for (std::size_t t = 0; t < signal.size(); ++t)
        {
                if (!std::isfinite(signal.values[t]))
                {
                        throw DomainError("signal value at index " + std::to_string(t) + " is not finite");
                }
        }
}

// Prefix sums in extended precision; window sums are differences of these.
std::vector<long double> prefix_sums(const std::vector<double>& x)
{
        std::vector<long double> p(x.size() + 1);
        p[0] = 0;
        for (std::size_t t = 0; t < x.size(); ++t)
        {
                p[t + 1] = p[t] + x[t];
        }
        return p;
}

void window_sums(const std::vector<long double>& prefix, std::size_t m, std::vector<double>& out)
{
        const std::size_t count = prefix.size() - m;
        out.resize(count);
        for (std::size_t t = 0; t < count; ++t)
        {
                out[t] = static_cast<double>(prefix[t + m] - prefix[t]);
        }
}

// Gap of window sums (not means) squared; divide by 2 m^2 / c for nu.
double level_scale(std::size_t m, VarianceConvention convention)
{
        return convention_factor(convention) / (2.0 * static_cast<double>(m) * static_cast<double>(m));
}
}

double WvEstimate::tau_seconds(std::size_t k) const
{
        return static_cast<double>(ScaleGrid::half_window(grid.level(k))) / sample_rate_hz;
}

WvEstimate empirical_wv(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention)
{
        check_signal(signal, grid);

        const std::vector<long double> prefix = prefix_sums(signal.values);
        Vector nu(grid.size());
        std::vector<double> w;
        for (std::size_t k = 0; k < grid.size(); ++k)
        {
                const std::size_t m = ScaleGrid::half_window(grid.level(k));
                window_sums(prefix, m, w);
                const double ss = kernels::sum_squared_gaps(w, m);
                nu[k] = ss * level_scale(m, convention) / static_cast<double>(grid.coeff_count(k));
        }

        return WvEstimate{.grid = grid,
                          .nu_hat = std::move(nu),
                          .coeff_counts = grid.coeff_counts(),
                          .convention = convention,
                          .sample_rate_hz = signal.sample_rate_hz};
}

WvEstimate allan_variance(const Signal& signal, const ScaleGrid& grid)
{
        return empirical_wv(signal, grid, VarianceConvention::Allan);
}

WvEstimate haar_wv(const Signal& signal, const ScaleGrid& grid)
{
        return empirical_wv(signal, grid, VarianceConvention::HaarWavelet);
}

std::vector<std::vector<double>> wv_contributions(const Signal& signal, const ScaleGrid& grid,
                                                  VarianceConvention convention)
{
        check_signal(signal, grid);

        const std::vector<long double> prefix = prefix_sums(signal.values);
        std::vector<std::vector<double>> res(grid.size());
        std::vector<double> w;
        for (std::size_t k = 0; k < grid.size(); ++k)
        {
                const std::size_t m = ScaleGrid::half_window(grid.level(k));
                window_sums(prefix, m, w);
                res[k].resize(grid.coeff_count(k));
                kernels::squared_gaps(w, m, res[k]);
                const double scale = level_scale(m, convention);
                for (double& v : res[k])
                {
                        v *= scale;
                }
        }
        return res;
}

std::size_t bootstrap_min_length(const ScaleGrid& grid)
{
        return 64 * ScaleGrid::half_window(grid.levels().back());
}

CovMethod default_cov_method(const Signal& signal, const ScaleGrid& grid)
{
        return signal.size() >= bootstrap_min_length(grid) ? CovMethod::BlockBootstrap : CovMethod::DiagonalLargeSample;
}

Matrix diagonal_large_sample_cov(const Vector& nu, const std::vector<std::size_t>& coeff_counts)
{
        if (static_cast<std::size_t>(nu.size()) != coeff_counts.size())
        {
                throw DomainError("variance and coefficient count vectors differ in length");
        }
        Matrix v = Matrix::Zero(nu.size(), nu.size());
        for (Eigen::Index k = 0; k < nu.size(); ++k)
        {
                v(k, k) = 2 * nu[k] * nu[k] / static_cast<double>(coeff_counts[k]);
        }
        return v;
}

namespace
{
Matrix block_bootstrap_cov(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention,
                           const BootstrapOptions& options)
{
        const std::size_t min_length = bootstrap_min_length(grid);
        if (signal.size() < min_length)
        {
                std::ostringstream os;
                os << "block bootstrap over levels up to " << grid.levels().back() << " needs at least " << min_length
                   << " samples, the signal has " << signal.size();
                throw RankError(os.str());
        }
        if (options.resamples < 2)
        {
                throw DomainError("block bootstrap needs at least 2 resamples");
        }
        check_signal(signal, grid);

        const std::size_t levels = grid.size();
        const std::size_t common = grid.coeff_count(levels - 1);
        const std::size_t block = options.block_length > 0 ? options.block_length
                                                          : 4 * ScaleGrid::half_window(grid.levels().back());
        if (block > common)
        {
                throw DomainError("bootstrap block length exceeds the number of coefficients at the deepest level");
        }
        const std::size_t blocks = (common + block - 1) / block;
        const std::size_t resamples = options.resamples;

        // Block starts are shared by all levels so cross-level dependence is kept.
        std::vector<std::size_t> starts(resamples * blocks);
        {
                Engine engine(derive_seed(options.seed, {0xb007}));
                boost::random::uniform_int_distribution<std::size_t> pick(0, common - block);
                for (std::size_t& s : starts)
                {
                        s = pick(engine);
                }
        }

        const std::vector<long double> prefix = prefix_sums(signal.values);
        Matrix means(levels, resamples);
        parallel_for(levels, options.workers,
                     [&](std::size_t k)
                     {
                             const std::size_t m = ScaleGrid::half_window(grid.level(k));
                             std::vector<double> w;
                             window_sums(prefix, m, w);
                             std::vector<double> contrib(grid.coeff_count(k));
                             kernels::squared_gaps(w, m, contrib);
                             std::vector<long double> cum(common + 1);
                             cum[0] = 0;
                             for (std::size_t t = 0; t < common; ++t)
                             {
                                     cum[t + 1] = cum[t] + contrib[t];
                             }
                             const double scale = level_scale(m, convention);
                             for (std::size_t b = 0; b < resamples; ++b)
                             {
                                     long double total = 0;
                                     for (std::size_t i = 0; i < blocks; ++i)
                                     {
                                             const std::size_t s = starts[b * blocks + i];
                                             total += cum[s + block] - cum[s];
                                     }
                                     means(k, b) = static_cast<double>(total) * scale
                                                   / static_cast<double>(blocks * block);
                             }
                     });

        const Vector centre = means.rowwise().mean();
        const Matrix dev = means.colwise() - centre;
        Matrix cov = dev * dev.transpose() / static_cast<double>(resamples - 1);

        // Rescale from the resampled length to the full coefficient count of each level.
        const double resampled = static_cast<double>(blocks * block);
        for (std::size_t i = 0; i < levels; ++i)
        {
                for (std::size_t k = 0; k < levels; ++k)
                {
                        cov(i, k) *= resampled
                                     / std::sqrt(static_cast<double>(grid.coeff_count(i))
                                                 * static_cast<double>(grid.coeff_count(k)));
                }
        }
        return 0.5 * (cov + cov.transpose());
}
}

Matrix wv_covariance(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention, CovMethod method,
                     const BootstrapOptions& options)
{
        switch (method)
        {
        case CovMethod::BlockBootstrap:
                return block_bootstrap_cov(signal, grid, convention, options);
        case CovMethod::DiagonalLargeSample:
        {
                const WvEstimate est = empirical_wv(signal, grid, convention);
                return diagonal_large_sample_cov(est.nu_hat, est.coeff_counts);
        }
        }
        throw DomainError("unknown covariance method");
}

WvEstimate wv_confidence(const WvEstimate& est, double level)
{
        if (!est.cov_hat)
        {
                throw DomainError("confidence intervals need a covariance estimate");
        }
        if (!(level >= 0 && level < 1))
        {
                throw DomainError("confidence level must lie in [0, 1)");
        }
        const double z = level == 0
                                 ? 0.0
                                 : boost::math::quantile(boost::math::normal_distribution<double>(), (1 + level) / 2);
        WvEstimate res = est;
        Vector lo(est.nu_hat.size());
        Vector hi(est.nu_hat.size());
        for (Eigen::Index k = 0; k < est.nu_hat.size(); ++k)
        {
                const double half = z * std::sqrt(std::max(0.0, (*est.cov_hat)(k, k)));
                lo[k] = std::max(0.0, est.nu_hat[k] - half);
                hi[k] = est.nu_hat[k] + half;
        }
        res.ci_lo = std::move(lo);
        res.ci_hi = std::move(hi);
        return res;
}
}
