#include "test_support.hpp"

#include <wvcal/fit.hpp>
#include <wvcal/mc.hpp>
#include <wvcal/random.hpp>
#include <wvcal/simulate.hpp>
#include <wvcal/wv.hpp>

#include <array>
#include <cmath>
#include <random>

using namespace wvcal;

namespace
{
constexpr std::array<Process, 5> ALL{Process::QN, Process::WN, Process::BI, Process::RW, Process::DR};

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, bool dyadic)
{
        std::normal_distribution<double> z(0.0, 3.0);
        std::vector<double> x(n);
        for (double& v : x)
        {
                v = dyadic ? std::round(z(rng) * 64) / 64 : z(rng);
        }
        return x;
}

ScaleGrid random_grid(std::mt19937_64& rng, std::size_t n)
{
        const ScaleGrid full = ScaleGrid::with_min_coeffs(n, 4);
        std::vector<int> levels;
        std::bernoulli_distribution keep(0.7);
        for (int j : full.levels())
        {
                if (keep(rng))
                {
                        levels.push_back(j);
                }
        }
        if (levels.empty())
        {
                levels.push_back(1);
        }
        return {levels, n};
}

// Every active process contributes about equally to nu at level 5, up to a
// factor drawn from [0.1, 10].
CompositeModel random_model(std::mt19937_64& rng)
{
        std::uniform_int_distribution<int> mask_dist(1, 31);
        std::uniform_real_distribution<double> spread(-1.0, 1.0);
        const int mask = mask_dist(rng);
        const ScaleGrid level5({5}, 1 << 12);
        CompositeModel m;
        for (std::size_t k = 0; k < ALL.size(); ++k)
        {
                if ((mask & (1 << k)) == 0)
                {
                        continue;
                }
                const Process p = ALL[k];
                CompositeModel unit;
                unit.set(p, 1.0);
                const double coef = model_wv(unit, VarianceConvention::Allan, level5)[0];
                const double balanced = is_amplitude_parameter(p) ? 1 / std::sqrt(coef) : 1 / coef;
                m.set(p, balanced * std::pow(10.0, spread(rng)));
        }
        return m;
}

double max_rel(const CompositeModel& a, const CompositeModel& b)
{
        return ((a.theta() - b.theta()).array().abs() / b.theta().array().abs()).maxCoeff();
}

Matrix random_spd(std::mt19937_64& rng, Eigen::Index n)
{
        std::normal_distribution<double> z;
        Matrix a(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
                for (Eigen::Index j = 0; j < n; ++j)
                {
                        a(i, j) = z(rng);
                }
        }
        return a * a.transpose() + 0.1 * Matrix::Identity(n, n);
}
}

TEST_CASE("property: shift invariance")
{
        std::mt19937_64 rng(101);
        std::uniform_int_distribution<std::size_t> len(16, 3000);
        for (int trial = 0; trial < 60; ++trial)
        {
                const bool dyadic = trial % 2 == 0;
                const std::size_t n = len(rng);
                const Signal x{random_values(rng, n, dyadic), 1.0};
                const ScaleGrid g = random_grid(rng, n);
                const double c = dyadic ? std::round(std::uniform_real_distribution<double>(-50, 50)(rng) * 8) / 8
                                        : std::uniform_real_distribution<double>(-50, 50)(rng);
                Signal shifted = x;
                for (double& v : shifted.values)
                {
                        v += c;
                }
                for (auto conv : {VarianceConvention::Allan, VarianceConvention::HaarWavelet})
                {
                        const Vector a = empirical_wv(x, g, conv).nu_hat;
                        const Vector b = empirical_wv(shifted, g, conv).nu_hat;
                        if (dyadic)
                        {
                                CHECK(a == b);
                        }
                        else
                        {
                                CHECK(((a - b).array().abs() <= 1e-9 * a.array().abs() + 1e-300).all());
                        }
                }
        }
}

TEST_CASE("property: scale equivariance")
{
        std::mt19937_64 rng(102);
        std::uniform_int_distribution<std::size_t> len(16, 3000);
        for (int trial = 0; trial < 60; ++trial)
        {
                const std::size_t n = len(rng);
                const Signal x{random_values(rng, n, false), 1.0};
                const ScaleGrid g = random_grid(rng, n);
                const bool power_of_two = trial % 2 == 0;
                const double a = power_of_two ? std::ldexp(1.0, std::uniform_int_distribution<int>(-20, 20)(rng))
                                              : std::pow(10.0, std::uniform_real_distribution<double>(-5, 5)(rng));
                Signal scaled = x;
                for (double& v : scaled.values)
                {
                        v *= a;
                }
                const Vector nu = allan_variance(x, g).nu_hat;
                const Vector nu_a = allan_variance(scaled, g).nu_hat;
                if (power_of_two)
                {
                        CHECK(nu_a == (a * a) * nu);
                }
                else
                {
                        CHECK(((nu_a - a * a * nu).array().abs() <= 1e-12 * a * a * nu.array().abs()).all());
                }
        }
}

TEST_CASE("property: exact-fit fixed point")
{
        std::mt19937_64 rng(103);
        int fits = 0;
        for (int trial = 0; trial < 40; ++trial)
        {
                const CompositeModel truth = random_model(rng);
                const std::vector<Process> active = truth.active_processes();
                const ScaleGrid g = ScaleGrid::first_levels(10, 1 << 16);
                WvEstimate est{.grid = g,
                               .nu_hat = model_wv(truth, VarianceConvention::Allan, g),
                               .coeff_counts = g.coeff_counts()};
                est.cov_hat = diagonal_large_sample_cov(est.nu_hat, est.coeff_counts);
                INFO("trial " << trial << " with " << active.size() << " processes");
                for (auto kind : {MomentFunction::Kind::Identity, MomentFunction::Kind::Log10})
                {
                        const MomentFunction f(kind);
                        std::vector<Matrix> omegas;
                        for (auto w : {WeightKind::Identity, WeightKind::DiagInverseSquared, WeightKind::EstimatedVInverse,
                                       WeightKind::OptimalOmega})
                        {
                                omegas.push_back(weight_matrix(w, est, f, std::nullopt, *est.cov_hat));
                        }
                        omegas.push_back(random_spd(rng, static_cast<Eigen::Index>(g.size())));
                        for (const Matrix& omega : omegas)
                        {
                                if (kind == MomentFunction::Kind::Identity)
                                {
                                        const FitResult cf = fit_closed_form(est.nu_hat, active, est.convention, g, omega);
                                        CHECK(max_rel(cf.theta_hat, truth) < 1e-8);
                                }
                                const FitResult it = fit_iterative(est.nu_hat, active, est.convention, g, f, omega);
                                CHECK(it.converged);
                                CHECK(max_rel(it.theta_hat, truth) < 1e-8);
                                ++fits;
                        }
                }
        }
        CHECK(fits == 400);
}

TEST_CASE("property: seed determinism")
{
        std::mt19937_64 rng(104);
        for (int trial = 0; trial < 10; ++trial)
        {
                CompositeModel m = random_model(rng);
                if (m.active(Process::BI))
                {
                        CompositeModel no_bi;
                        for (Process p : m.active_processes())
                        {
                                if (p != Process::BI)
                                {
                                        no_bi.set(p, m.get(p));
                                }
                        }
                        if (no_bi.size() == 0)
                        {
                                no_bi.set(Process::WN, 1.0);
                        }
                        m = no_bi;
                }
                const std::uint64_t seed = rng();
                const SimConfig cfg{m, 1 << 12, seed, 100.0};
                const Signal a = simulate(cfg);
                CHECK(a.values == simulate(cfg).values);
                CHECK(a.values != simulate({m, 1 << 12, seed + 1, 100.0}).values);

                const ScaleGrid g = ScaleGrid::first_levels(4, a.size());
                BootstrapOptions one;
                one.resamples = 50;
                one.seed = seed;
                BootstrapOptions many = one;
                many.workers = 3;
                CHECK(wv_covariance(a, g, VarianceConvention::Allan, CovMethod::BlockBootstrap, one)
                      == wv_covariance(a, g, VarianceConvention::Allan, CovMethod::BlockBootstrap, many));

                Experiment exp;
                exp.truth = m;
                exp.length = 1 << 11;
                exp.reps = 4;
                exp.seed = seed;
                exp.cov = CovPolicy::Diagonal;
                for (const char* name : {"gmwm", "armav", "avsm"})
                {
                        exp.methods.push_back({name, named_method(name)});
                }
                const std::string first = summary_json(run_experiment(exp));
                exp.workers = 2;
                CHECK(summary_json(run_experiment(exp)) == first);
        }
}

TEST_CASE("property: rmse identity")
{
        std::mt19937_64 rng(105);
        std::uniform_int_distribution<std::size_t> count(2, 400);
        std::normal_distribution<double> z;
        for (int trial = 0; trial < 200; ++trial)
        {
                const double truth = std::exp(z(rng));
                const double shift = z(rng) * truth;
                const double scale = std::exp(z(rng)) * truth;
                std::vector<double> xs(count(rng));
                for (double& x : xs)
                {
                        x = truth + shift + scale * z(rng);
                }
                const ParameterSummary s = summarize("m", Process::WN, truth, xs, 0);
                const double n = static_cast<double>(xs.size());
                CHECK(s.rmse * s.rmse
                      == doctest::Approx(s.bias * s.bias + s.sd * s.sd * (n - 1) / n).epsilon(1e-10));
        }
}
