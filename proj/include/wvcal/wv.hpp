#pragma once

#include <wvcal/model.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace wvcal
{
struct Signal
{
        std::vector<double> values;
        double sample_rate_hz = 1.0;

        [[nodiscard]] std::size_t size() const
        {
                return values.size();
        }
};

// Empirical Allan / Haar wavelet variance per dyadic level.
struct WvEstimate
{
        ScaleGrid grid;
        Vector nu_hat;
        std::vector<std::size_t> coeff_counts;
        VarianceConvention convention = VarianceConvention::Allan;
        double sample_rate_hz = 1.0;
        // Covariance of nu_hat (finite-sample, not rescaled by N).
        std::optional<Matrix> cov_hat{};
        std::optional<Vector> ci_lo{};
        std::optional<Vector> ci_hi{};

        // Averaging time of level k in seconds (half-window / fs).
        [[nodiscard]] double tau_seconds(std::size_t k) const;
};

// Overlapped Allan variance:
//   nu_j = 1 / (2 N_j) * sum_t (mean of x[t+m, t+2m) - mean of x[t, t+m))^2,  m = 2^j.
WvEstimate allan_variance(const Signal& signal, const ScaleGrid& grid);
// Haar wavelet variance, c = 1/2 of the Allan variance.
WvEstimate haar_wv(const Signal& signal, const ScaleGrid& grid);
WvEstimate empirical_wv(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention);

// Per-coefficient contributions e_j(t) whose mean over t is nu_j, for every
// level of the grid (row k has grid.coeff_count(k) entries).
std::vector<std::vector<double>> wv_contributions(const Signal& signal, const ScaleGrid& grid,
                                                  VarianceConvention convention);

enum class CovMethod
{
        BlockBootstrap,
        DiagonalLargeSample,
};

struct BootstrapOptions
{
        std::size_t resamples = 200;
        // 0 selects 2^(J+2) for the deepest level J.
        std::size_t block_length = 0;
        std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
        std::size_t workers = 1;
};

// Smallest signal length accepted by the block bootstrap for this grid: 64 * 2^J.
std::size_t bootstrap_min_length(const ScaleGrid& grid);

Matrix wv_covariance(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention, CovMethod method,
                     const BootstrapOptions& options = {});

// diag(2 nu_j^2 / N_j).
Matrix diagonal_large_sample_cov(const Vector& nu, const std::vector<std::size_t>& coeff_counts);

// Bootstrap when the signal is long enough, otherwise the diagonal approximation.
CovMethod default_cov_method(const Signal& signal, const ScaleGrid& grid);

// Gaussian interval nu_j +- z sqrt(V_jj), lower bound clamped at zero.
WvEstimate wv_confidence(const WvEstimate& est, double level);
}
