#include <wvcal/error.hpp>
#include <wvcal/fit.hpp>
#include <wvcal/mc.hpp>
#include <wvcal/random.hpp>
#include <wvcal/simulate.hpp>
#include <wvcal/units.hpp>

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

using namespace wvcal;

namespace
{
CompositeModel gyro_model()
{
        UnitSpec u;
        u.quantity = Quantity::GyroRate;
        u.sample_rate_hz = 250;
        return physical_to_model({{Process::WN, 0.157}, {Process::RW, 1.34}}, u);
}

CompositeModel accel_model()
{
        UnitSpec u;
        u.quantity = Quantity::Accel;
        u.sample_rate_hz = 250;
        return physical_to_model({{Process::QN, 1.79e-6}, {Process::WN, 4.70e-2}, {Process::RW, 4.35e1},
                                  {Process::DR, 4.14e1}},
                                 u);
}

WvEstimate noiseless(const CompositeModel& m, const ScaleGrid& g)
{
        return WvEstimate{.grid = g,
                          .nu_hat = model_wv(m, VarianceConvention::Allan, g),
                          .coeff_counts = g.coeff_counts()};
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

double max_rel(const CompositeModel& a, const CompositeModel& b)
{
        const Vector x = a.theta();
        const Vector y = b.theta();
        return ((x - y).array().abs() / y.array().abs()).maxCoeff();
}

CompositeModel random_like(const CompositeModel& m, std::mt19937_64& rng)
{
        std::uniform_real_distribution<double> u(-1, 1);
        CompositeModel r;
        for (Process p : m.active_processes())
        {
                r.set(p, m.get(p) * std::exp(u(rng)));
        }
        return r;
}
}

TEST_CASE("objective examples")
{
        Vector nu(2);
        nu << 1.0, 2.0;
        Vector hat(2);
        hat << 1.1, 1.8;
        const Matrix eye = Matrix::Identity(2, 2);
        CHECK(moment_distance(nu, nu, MomentFunction{}, eye) == 0.0);
        CHECK(moment_distance(nu, hat, MomentFunction{}, eye) == doctest::Approx(0.05).epsilon(1e-12));

        const MomentFunction log10(MomentFunction::Kind::Log10);
        const double base = moment_distance(nu, hat, log10, eye);
        CHECK(moment_distance(nu * 37.5, hat * 37.5, log10, eye) == doctest::Approx(base).epsilon(1e-10));
        Vector bad = hat;
        bad[0] = -1;
        CHECK_THROWS_AS(static_cast<void>(log10.apply(bad)), DomainError);
}

TEST_CASE("closed form interpolates a square system")
{
        const std::vector<Process> all(ALL_PROCESSES.begin(), ALL_PROCESSES.end());
        const ScaleGrid g({1, 2, 3, 4, 5}, 1024);
        const Matrix x = design_matrix(all, VarianceConvention::Allan, g);
        Vector h(5);
        h << 0.3, 1.2, 0.5, 0.05, 0.01;
        const Vector nu = x * h;
        const Vector expected = x.partialPivLu().solve(nu);
        const FitResult fit = fit_closed_form(nu, all, VarianceConvention::Allan, g, Matrix::Identity(5, 5));
        const Vector fitted = h_map(fit.theta_hat);
        CHECK(((fitted - expected).array().abs() / expected.array()).maxCoeff() < 1e-10);
        CHECK_FALSE(fit.projected);
}

TEST_CASE("too few scales is a rank error naming the problem")
{
        const ScaleGrid g({1, 2}, 1024);
        CompositeModel m = accel_model();
        CHECK_THROWS_AS(fit_closed_form(model_wv(m, VarianceConvention::Allan, g), m.active_processes(),
                                        VarianceConvention::Allan, g, Matrix::Identity(2, 2)),
                        RankError);
}

TEST_CASE("exact-fit fixed point for every moment function and weight")
{
        std::mt19937_64 rng(17);
        const ScaleGrid g = ScaleGrid::first_levels(10, 1 << 18);
        for (const CompositeModel& family : {gyro_model(), accel_model()})
        {
                for (int trial = 0; trial < 10; ++trial)
                {
                        const CompositeModel truth = random_like(family, rng);
                        const WvEstimate est = noiseless(truth, g);
                        const std::vector<Process> active = truth.active_processes();
                        const Matrix v = diagonal_large_sample_cov(est.nu_hat, est.coeff_counts);
                        for (auto kind : {MomentFunction::Kind::Identity, MomentFunction::Kind::Log10})
                        {
                                const MomentFunction f(kind);
                                std::vector<Matrix> omegas{Matrix::Identity(g.size(), g.size()),
                                                           weight_matrix(WeightKind::DiagInverseSquared, est, f),
                                                           weight_matrix(WeightKind::OptimalOmega, est, f, std::nullopt, v),
                                                           random_spd(rng, static_cast<Eigen::Index>(g.size()))};
                                for (const Matrix& omega : omegas)
                                {
                                        if (kind == MomentFunction::Kind::Identity)
                                        {
                                                const FitResult cf =
                                                        fit_closed_form(est.nu_hat, active, est.convention, g, omega);
                                                CHECK(max_rel(cf.theta_hat, truth) < 1e-8);
                                        }
                                        const FitResult it =
                                                fit_iterative(est.nu_hat, active, est.convention, g, f, omega);
                                        CHECK(it.converged);
                                        CHECK(max_rel(it.theta_hat, truth) < 1e-8);
                                }
                        }
                        for (const char* name : {"gmwm", "armav"})
                        {
                                const FitResult fit = estimate(named_method(name), est, active);
                                CHECK(max_rel(fit.theta_hat, truth) < 1e-8);
                        }
                }
        }
}

TEST_CASE("noiseless recovery to 1e-10 with the closed form")
{
        const ScaleGrid g = ScaleGrid::first_levels(12, 1 << 18);
        const CompositeModel truth = accel_model();
        const WvEstimate est = noiseless(truth, g);
        const FitResult fit = fit_closed_form(est.nu_hat, truth.active_processes(), est.convention, g,
                                              weight_matrix(WeightKind::DiagInverseSquared, est, MomentFunction{}));
        CHECK(max_rel(fit.theta_hat, truth) < 1e-10);
        CHECK(fit.objective < 1e-20);
}

TEST_CASE("closed form and iterative agree on simulated gyro data when interior")
{
        const CompositeModel truth = gyro_model();
        const std::size_t t = 1 << 18;
        const ScaleGrid g = ScaleGrid::with_min_coeffs(t);
        int interior = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed)
        {
                const WvEstimate est = empirical_wv(simulate({truth, t, derive_seed(300, {seed}), 250}), g,
                                                    VarianceConvention::Allan);
                const Matrix omega = weight_matrix(WeightKind::DiagInverseSquared, est, MomentFunction{});
                const FitResult cf = fit_closed_form(est.nu_hat, truth.active_processes(), est.convention, g, omega);
                if (cf.projected)
                {
                        continue;
                }
                ++interior;
                const FitResult it =
                        fit_iterative(est.nu_hat, truth.active_processes(), est.convention, g, MomentFunction{}, omega);
                CHECK(it.converged);
                CHECK(max_rel(it.theta_hat, cf.theta_hat) < 1e-6);
        }
        CHECK(interior > 0);
}

TEST_CASE("projection flags a non-interior closed form")
{
        const ScaleGrid g({1, 2, 3, 4}, 1024);
        CompositeModel wn;
        wn.set(Process::WN, 1.0);
        Vector nu = model_wv(wn, VarianceConvention::Allan, g);
        // Curvature below pure white noise forces a negative random-walk coefficient.
        nu[3] *= 0.8;
        const FitResult fit = fit_closed_form(nu, {Process::WN, Process::RW}, VarianceConvention::Allan, g,
                                              Matrix::Identity(4, 4));
        CHECK(fit.projected);
        CHECK(fit.theta_hat.get(Process::RW) > 0);
        CHECK(fit.theta_hat.get(Process::RW) < 1e-9);
}

TEST_CASE("sandwich covariance")
{
        Matrix a(2, 1);
        a << 1, 1;
        const Matrix eye = Matrix::Identity(2, 2);
        CHECK(sandwich_covariance(a, eye, eye, eye)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

        std::mt19937_64 rng(3);
        std::normal_distribution<double> z;
        Matrix a53(5, 3);
        for (Eigen::Index i = 0; i < 5; ++i)
        {
                for (Eigen::Index j = 0; j < 3; ++j)
                {
                        a53(i, j) = z(rng);
                }
        }
        const Matrix v = random_spd(rng, 5);
        const Matrix i5 = Matrix::Identity(5, 5);
        // Dense oracle: B = (A^T A)^-1 A^T via normal equations and explicit inverse.
        const Matrix b = (a53.transpose() * a53).inverse() * a53.transpose();
        const Matrix oracle = b * v * b.transpose();
        const Matrix got = sandwich_covariance(a53, i5, i5, v);
        CHECK((got - oracle).cwiseAbs().maxCoeff() <= 1e-10 * oracle.cwiseAbs().maxCoeff());

        // Log10 at nu = 1: F = I / ln10 rescales Omega* by 1/ln10^2, which cancels in B.
        const MomentFunction log10(MomentFunction::Kind::Log10);
        const Matrix f = log10.jacobian(Vector::Ones(5));
        CHECK((f - i5 / std::log(10.0)).cwiseAbs().maxCoeff() < 1e-15);
        const Matrix omega = random_spd(rng, 5);
        const Matrix s_log = sandwich_covariance(a53, f, omega, v);
        const Matrix s_id = sandwich_covariance(a53, i5, omega / (std::log(10.0) * std::log(10.0)), v);
        CHECK((s_log - s_id).cwiseAbs().maxCoeff() <= 1e-10 * s_id.cwiseAbs().maxCoeff());
}

TEST_CASE("optimal weight examples")
{
        Matrix v = Matrix::Zero(2, 2);
        v(0, 0) = 2;
        v(1, 1) = 4;
        const Matrix o = optimal_omega(MomentFunction{}, v, Vector::Ones(2));
        CHECK(o(0, 0) == doctest::Approx(0.5));
        CHECK(o(1, 1) == doctest::Approx(0.25));
        CHECK(o(0, 1) == 0.0);

        const Matrix ol = optimal_omega(MomentFunction(MomentFunction::Kind::Log10), Matrix::Identity(2, 2), Vector::Ones(2));
        const double l2 = std::log(10.0) * std::log(10.0);
        CHECK(ol(0, 0) == doctest::Approx(l2).epsilon(1e-14));
        CHECK(ol(1, 1) == doctest::Approx(l2).epsilon(1e-14));
}

TEST_CASE("optimal weight is efficient")
{
        const CompositeModel truth = gyro_model();
        const ScaleGrid g = ScaleGrid::first_levels(12, 1 << 18);
        const Matrix a = jacobian_a(truth, VarianceConvention::Allan, g);
        const Vector nu = model_wv(truth, VarianceConvention::Allan, g);
        const Matrix v = diagonal_large_sample_cov(nu, g.coeff_counts());
        std::mt19937_64 rng(29);
        for (auto kind : {MomentFunction::Kind::Identity, MomentFunction::Kind::Log10})
        {
                const MomentFunction f(kind);
                const Matrix fj = f.jacobian(nu);
                const Matrix best = sandwich_covariance(a, fj, optimal_omega(f, v, nu), v);
                for (int trial = 0; trial < 20; ++trial)
                {
                        const Matrix s = sandwich_covariance(a, fj, random_spd(rng, static_cast<Eigen::Index>(g.size())), v);
                        const Matrix diff = s - best;
                        const Eigen::SelfAdjointEigenSolver<Matrix> eig((diff + diff.transpose()) / 2);
                        CHECK(eig.eigenvalues().minCoeff() >= -1e-9 * s.trace());
                }
        }
}

TEST_CASE("two-step dominance under the optimal metric")
{
        const CompositeModel truth = gyro_model();
        const std::size_t t = 1 << 18;
        const ScaleGrid g = ScaleGrid::first_levels(12, t);
        const Signal s = simulate({truth, t, 55, 250});
        WvEstimate est = empirical_wv(s, g, VarianceConvention::Allan);
        est.cov_hat = wv_covariance(s, g, VarianceConvention::Allan, CovMethod::BlockBootstrap);
        const MomentFunction f;
        const FitResult first = fit_closed_form(est.nu_hat, truth.active_processes(), est.convention, g,
                                                weight_matrix(WeightKind::DiagInverseSquared, est, f));
        const Matrix opt = weight_matrix(WeightKind::OptimalOmega, est, f, first.fitted_wv, *est.cov_hat);
        const FitResult second = fit_closed_form(est.nu_hat, truth.active_processes(), est.convention, g, opt);
        const double q1 = gmwfm_objective(first.theta_hat, est.nu_hat, f, opt, est.convention, g);
        const double q2 = gmwfm_objective(second.theta_hat, est.nu_hat, f, opt, est.convention, g);
        CHECK(q2 <= q1 * (1 + 1e-12));

        const FitResult gmwm = estimate(named_method("gmwm"), est, truth.active_processes());
        CHECK(max_rel(gmwm.theta_hat, second.theta_hat) < 1e-12);
        CHECK(gmwm.std_errors.size() == 2);
        CHECK(gmwm.std_errors.allFinite());
}

TEST_CASE("slope method")
{
        CompositeModel wn;
        wn.set(Process::WN, 1.0);
        const std::size_t t = 1 << 20;
        const WvEstimate est = empirical_wv(simulate({wn, t, 8, 1}), ScaleGrid::with_min_coeffs(t),
                                            VarianceConvention::Allan);
        const FitResult fit = fit_avsm(est, {Process::WN});
        CHECK(fit.failures.empty());
        CHECK(std::abs(fit.theta_hat.get(Process::WN) - 1.0) < 0.1);

        CompositeModel dr;
        dr.set(Process::DR, 0.1);
        const WvEstimate ramp = empirical_wv(simulate({dr, 4096, 1, 1}), ScaleGrid::with_min_coeffs(4096),
                                             VarianceConvention::Allan);
        CHECK(fit_avsm(ramp, {Process::DR}).theta_hat.get(Process::DR) == doctest::Approx(0.1).epsilon(1e-6));

        CompositeModel tiny;
        tiny.set(Process::WN, 1.0).set(Process::RW, 1e-16);
        const WvEstimate mixed = empirical_wv(simulate({tiny, 1 << 16, 2, 1}), ScaleGrid::with_min_coeffs(1 << 16),
                                              VarianceConvention::Allan);
        const FitResult partial = fit_avsm(mixed, {Process::WN, Process::RW});
        CHECK(partial.failures.count(Process::RW) == 1);
        CHECK_FALSE(partial.theta_hat.active(Process::RW));
        CHECK(partial.theta_hat.active(Process::WN));

        WvEstimate haar = est;
        haar.convention = VarianceConvention::HaarWavelet;
        CHECK_THROWS_AS(fit_avsm(haar, {Process::WN}), DomainError);
}

TEST_CASE("moment bias: identity unbiased, log10 biased downward")
{
        CompositeModel wn;
        wn.set(Process::WN, 1.0);
        const std::vector<int> levels{1, 2, 3, 4, 5};
        const MomentBias id = moment_bias_probe(wn, MomentFunction{}, 1 << 10, 1000, 61, VarianceConvention::Allan,
                                                levels);
        for (Eigen::Index k = 0; k < id.bias.size(); ++k)
        {
                CHECK(std::abs(id.bias[k]) <= 3 * id.std_error[k]);
        }
        // Second-order delta method: E[log10 nu_hat] - log10 nu = -Var(nu_hat) / (2 nu^2 ln10),
        // with Var(nu_hat) / nu^2 = (sd of log10 nu_hat * ln10)^2 read off the same MC.
        const MomentFunction log10(MomentFunction::Kind::Log10);
        const MomentBias lb = moment_bias_probe(wn, log10, 1 << 10, 1000, 61, VarianceConvention::Allan, levels);
        const double ln10 = std::log(10.0);
        for (Eigen::Index k = 0; k < lb.bias.size(); ++k)
        {
                const double sd = lb.std_error[k] * std::sqrt(1000.0);
                const double predicted = -sd * sd * ln10 / 2;
                CHECK(std::abs(lb.bias[k] - predicted) <= 3 * lb.std_error[k]);
        }
        // Significance needs bias / SE = sd ln10 sqrt(reps) / 2 well above 3.
        const MomentBias deep_bias = moment_bias_probe(wn, log10, 1 << 10, 10000, 62, VarianceConvention::Allan,
                                                       std::vector<int>{4, 5});
        for (Eigen::Index k = 0; k < deep_bias.bias.size(); ++k)
        {
                CHECK(deep_bias.bias[k] < -3 * deep_bias.std_error[k]);
        }
        CHECK_THROWS_AS(moment_bias_probe(wn, log10, 1 << 10, 50, 1), DomainError);

        // The bias is O(1/N): quadrupling T divides it by about four at a deep level.
        const std::vector<int> deep{5};
        const MomentBias b1 = moment_bias_probe(wn, log10, 1 << 10, 4000, 63, VarianceConvention::Allan, deep);
        const MomentBias b4 = moment_bias_probe(wn, log10, 1 << 12, 4000, 64, VarianceConvention::Allan, deep);
        const double ratio = b4.bias[0] / b1.bias[0];
        CHECK(ratio > 0.1);
        CHECK(ratio < 0.45);
}

TEST_CASE("identity and log10 moments estimate the same target")
{
        const CompositeModel truth = gyro_model();
        const ScaleGrid g = ScaleGrid::first_levels(12, 1 << 18);
        const WvEstimate exact = noiseless(truth, g);
        const FitResult a = estimate(named_method("gmwm"), exact, truth.active_processes());
        const FitResult b = estimate({MomentFunction::Kind::Log10, WeightKind::OptimalOmega, SolverKind::TwoStep}, exact,
                                     truth.active_processes());
        CHECK(max_rel(a.theta_hat, b.theta_hat) < 1e-8);

        // Noisy input: the two estimates of sigma^2 differ by o(1).
        std::vector<double> diffs;
        for (std::uint64_t r = 0; r < 200; ++r)
        {
                const WvEstimate est = empirical_wv(simulate({truth, 1 << 18, derive_seed(70, {r}), 250}), g,
                                                    VarianceConvention::Allan);
                EstimateOptions opts;
                opts.compute_covariance = false;
                const FitResult x = estimate(named_method("gmwm"), est, truth.active_processes(), opts);
                const FitResult y = estimate({MomentFunction::Kind::Log10, WeightKind::OptimalOmega, SolverKind::TwoStep},
                                             est, truth.active_processes(), opts);
                diffs.push_back(std::abs(x.theta_hat.get(Process::WN) / y.theta_hat.get(Process::WN) - 1));
        }
        std::nth_element(diffs.begin(), diffs.begin() + 100, diffs.end());
        CHECK(diffs[100] < 0.02);
}

TEST_CASE("identity objective is minimized on average at the truth")
{
        CompositeModel truth;
        truth.set(Process::WN, 1.0).set(Process::RW, 1e-4);
        const std::size_t t = 1 << 14;
        const ScaleGrid g = ScaleGrid::first_levels(8, t);
        const Matrix omega = Matrix::Identity(g.size(), g.size());
        const std::vector<double> factors{0.9, 0.95, 1.0, 1.05, 1.1};
        std::vector<double> mean(factors.size() * factors.size(), 0.0);
        const int reps = 200;
        for (int r = 0; r < reps; ++r)
        {
                const Vector nu_hat = empirical_wv(simulate({truth, t, derive_seed(90, {std::uint64_t(r)}), 1}), g,
                                                   VarianceConvention::Allan)
                                              .nu_hat;
                for (std::size_t a = 0; a < factors.size(); ++a)
                {
                        for (std::size_t b = 0; b < factors.size(); ++b)
                        {
                                CompositeModel m;
                                m.set(Process::WN, factors[a]).set(Process::RW, 1e-4 * factors[b]);
                                mean[a * factors.size() + b] +=
                                        gmwfm_objective(m, nu_hat, MomentFunction{}, omega, VarianceConvention::Allan, g);
                        }
                }
        }
        const auto best = std::min_element(mean.begin(), mean.end()) - mean.begin();
        CHECK(best == 2 * static_cast<long>(factors.size()) + 2);
}

TEST_CASE("ARMAV converges on simulated accelerometer data")
{
        Experiment exp;
        exp.truth = accel_model();
        exp.length = 1 << 18;
        exp.reps = 500;
        exp.seed = 404;
        exp.sample_rate_hz = 250;
        exp.methods = {{"armav", named_method("armav")}};
        exp.cov = CovPolicy::Diagonal;
        const McSummary s = run_experiment(exp);
        std::size_t ok = 0;
        for (const ReplicationRecord& rec : s.raw)
        {
                const bool finite = std::all_of(rec.estimates.begin(), rec.estimates.end(),
                                                [](const auto& e) { return e.second && std::isfinite(*e.second); });
                ok += rec.converged && finite ? 1 : 0;
        }
        CHECK(ok >= 495);
}
