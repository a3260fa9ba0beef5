#include <wvcal/error.hpp>
#include <wvcal/fit.hpp>
#include <wvcal/parallel.hpp>
#include <wvcal/random.hpp>
#include <wvcal/simulate.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace wvcal
{
//
// Moment functions
//

Vector MomentFunction::apply(const Vector& x) const
{
        if (kind_ == Kind::Identity)
        {
                return x;
        }
        Vector res(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
        {
                if (!(x[i] > 0))
                {
                        std::ostringstream os;
                        os << "log10 moment function needs positive variances, entry " << i << " is " << x[i];
                        throw DomainError(os.str());
                }
                res[i] = std::log10(x[i]);
        }
        return res;
}

Vector MomentFunction::jacobian_diagonal(const Vector& x) const
{
        if (kind_ == Kind::Identity)
        {
                return Vector::Ones(x.size());
        }
        Vector res(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
        {
                if (!(x[i] > 0))
                {
                        throw DomainError("log10 moment function Jacobian needs positive variances");
                }
                res[i] = 1.0 / (x[i] * std::numbers::ln10);
        }
        return res;
}

Matrix MomentFunction::jacobian(const Vector& x) const
{
        return jacobian_diagonal(x).asDiagonal();
}

std::string_view moment_name(MomentFunction::Kind k)
{
        return k == MomentFunction::Kind::Identity ? "identity" : "log10";
}

MomentFunction::Kind parse_moment(std::string_view s)
{
        if (s == "identity")
        {
                return MomentFunction::Kind::Identity;
        }
        if (s == "log10")
        {
                return MomentFunction::Kind::Log10;
        }
        throw ParseError("unknown moment function '" + std::string(s) + "' (expected identity or log10)");
}

std::string_view weight_name(WeightKind k)
{
        switch (k)
        {
        case WeightKind::Identity:
                return "identity";
        case WeightKind::DiagInverseSquared:
                return "diag_inverse_squared";
        case WeightKind::EstimatedVInverse:
                return "estimated_v_inverse";
        case WeightKind::OptimalOmega:
                return "optimal";
        }
        return "?";
}

WeightKind parse_weight(std::string_view s)
{
        for (WeightKind k : {WeightKind::Identity, WeightKind::DiagInverseSquared, WeightKind::EstimatedVInverse,
                             WeightKind::OptimalOmega})
        {
                if (weight_name(k) == s)
                {
                        return k;
                }
        }
        throw ParseError("unknown weight '" + std::string(s)
                         + "' (expected identity, diag_inverse_squared, estimated_v_inverse or optimal)");
}

std::string_view solver_name(SolverKind k)
{
        switch (k)
        {
        case SolverKind::ClosedForm:
                return "closed_form";
        case SolverKind::Iterative:
                return "iterative";
        case SolverKind::TwoStep:
                return "two_step";
        case SolverKind::Avsm:
                return "avsm";
        }
        return "?";
}

SolverKind parse_solver(std::string_view s)
{
        for (SolverKind k : {SolverKind::ClosedForm, SolverKind::Iterative, SolverKind::TwoStep, SolverKind::Avsm})
        {
                if (solver_name(k) == s)
                {
                        return k;
                }
        }
        throw ParseError("unknown solver '" + std::string(s) + "' (expected closed_form, iterative, two_step or avsm)");
}

MethodDescriptor named_method(std::string_view name)
{
        if (name == "gmwm")
        {
                return {MomentFunction::Kind::Identity, WeightKind::OptimalOmega, SolverKind::TwoStep};
        }
        if (name == "armav")
        {
                return {MomentFunction::Kind::Log10, WeightKind::DiagInverseSquared, SolverKind::Iterative};
        }
        if (name == "avsm")
        {
                return {MomentFunction::Kind::Identity, WeightKind::Identity, SolverKind::Avsm};
        }
        throw ParseError("unknown method '" + std::string(name) + "' (expected gmwm, armav or avsm)");
}

//
// Weights
//

void check_spd(const Matrix& m, std::string_view what)
{
        if (m.rows() != m.cols() || m.rows() == 0)
        {
                throw DomainError(std::string(what) + " must be a non-empty square matrix");
        }
        const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
        const double scale = m.cwiseAbs().maxCoeff();
        if (!(asym <= 1e-10 * scale))
        {
                throw DomainError(std::string(what) + " is not symmetric");
        }
        Vector d(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
        {
                if (!(m(i, i) > 0) || !std::isfinite(m(i, i)))
                {
                        throw DomainError(std::string(what) + " is not positive definite (non-positive diagonal)");
                }
                d[i] = 1.0 / std::sqrt(m(i, i));
        }
        const Matrix unit = d.asDiagonal() * (0.5 * (m + m.transpose())) * d.asDiagonal();
        const Eigen::SelfAdjointEigenSolver<Matrix> es(unit, Eigen::EigenvaluesOnly);
        if (!(es.eigenvalues().minCoeff() > 1e-12 * static_cast<double>(m.rows())))
        {
                throw DomainError(std::string(what) + " is not positive definite");
        }
}

namespace
{
Matrix spd_inverse(const Matrix& m, std::string_view what)
{
        // Invert in unit-diagonal form to keep badly scaled covariances accurate.
        Vector d(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
        {
                if (!(m(i, i) > 0))
                {
                        throw RankError(std::string(what) + " is singular");
                }
                d[i] = 1.0 / std::sqrt(m(i, i));
        }
        const Matrix unit = d.asDiagonal() * (0.5 * (m + m.transpose())) * d.asDiagonal();
        const Eigen::LLT<Matrix> llt(unit);
        if (llt.info() != Eigen::Success)
        {
                throw RankError(std::string(what) + " is singular or not positive definite");
        }
        const Matrix inv = d.asDiagonal() * llt.solve(Matrix::Identity(m.rows(), m.cols())) * d.asDiagonal();
        return 0.5 * (inv + inv.transpose());
}
}

Matrix optimal_omega(const MomentFunction& f, const Matrix& v_hat, const Vector& nu_at_theta)
{
        if (v_hat.rows() != nu_at_theta.size() || v_hat.cols() != nu_at_theta.size())
        {
                throw DomainError("covariance and variance vector sizes differ");
        }
        const Vector fd = f.jacobian_diagonal(nu_at_theta);
        const Matrix fvf = fd.asDiagonal() * v_hat * fd.asDiagonal();
        Matrix res = spd_inverse(fvf, "F V F^T");
        check_spd(res, "optimal weight");
        return res;
}

Matrix weight_matrix(WeightKind kind, const WvEstimate& est, const MomentFunction& f,
                     const std::optional<Vector>& nu_at_theta, const std::optional<Matrix>& v_hat)
{
        const Eigen::Index j = est.nu_hat.size();
        Matrix omega;
        switch (kind)
        {
        case WeightKind::Identity:
                omega = Matrix::Identity(j, j);
                break;
        case WeightKind::DiagInverseSquared:
        {
                // Inverse of diag(nu^2 / N) carried to the moment space of f.
                omega = Matrix::Zero(j, j);
                for (Eigen::Index k = 0; k < j; ++k)
                {
                        if (!(est.nu_hat[k] > 0))
                        {
                                throw DomainError("diag(N / nu^2) weight needs positive empirical variances");
                        }
                        omega(k, k) = static_cast<double>(est.coeff_counts[k]) / (est.nu_hat[k] * est.nu_hat[k]);
                }
                const Vector fd = f.jacobian_diagonal(est.nu_hat);
                omega.diagonal().array() /= fd.array().square();
                break;
        }
        case WeightKind::EstimatedVInverse:
        {
                const Matrix* v = v_hat ? &*v_hat : (est.cov_hat ? &*est.cov_hat : nullptr);
                if (v == nullptr)
                {
                        throw DomainError("V^-1 weight needs a covariance estimate");
                }
                omega = spd_inverse(*v, "V_hat");
                break;
        }
        case WeightKind::OptimalOmega:
        {
                const Matrix* v = v_hat ? &*v_hat : (est.cov_hat ? &*est.cov_hat : nullptr);
                if (v == nullptr)
                {
                        throw DomainError("optimal weight needs a covariance estimate");
                }
                omega = optimal_omega(f, *v, nu_at_theta ? *nu_at_theta : est.nu_hat);
                break;
        }
        }
        check_spd(omega, "weight matrix");
        return omega;
}

//
// Objective
//

double moment_distance(const Vector& nu_model, const Vector& nu_hat, const MomentFunction& f, const Matrix& omega)
{
        if (nu_model.size() != nu_hat.size() || omega.rows() != nu_hat.size() || omega.cols() != nu_hat.size())
        {
                throw DomainError("objective dimensions do not match");
        }
        const Vector r = f.apply(nu_hat) - f.apply(nu_model);
        return std::max(0.0, r.dot(omega * r));
}

double gmwfm_objective(const CompositeModel& theta, const Vector& nu_hat, const MomentFunction& f, const Matrix& omega,
                       VarianceConvention convention, const ScaleGrid& grid)
{
        return moment_distance(model_wv(theta, convention, grid), nu_hat, f, omega);
}

//
// Closed form
//

namespace
{
// Upper Cholesky factor U with Omega = U^T U, so ||r||^2_Omega = ||U r||^2.
Matrix whitening(const Matrix& omega)
{
        bool diagonal = true;
        for (Eigen::Index i = 0; i < omega.rows() && diagonal; ++i)
        {
                for (Eigen::Index k = 0; k < omega.cols(); ++k)
                {
                        if (i != k && omega(i, k) != 0)
                        {
                                diagonal = false;
                                break;
                        }
                }
        }
        if (diagonal)
        {
                return omega.diagonal().cwiseSqrt().asDiagonal();
        }
        Vector d(omega.rows());
        for (Eigen::Index i = 0; i < omega.rows(); ++i)
        {
                d[i] = std::sqrt(omega(i, i));
        }
        const Matrix unit = d.cwiseInverse().asDiagonal() * omega * d.cwiseInverse().asDiagonal();
        const Eigen::LLT<Matrix> llt(0.5 * (unit + unit.transpose()));
        if (llt.info() != Eigen::Success)
        {
                throw DomainError("weight matrix is not positive definite");
        }
        return Matrix(llt.matrixU()) * d.asDiagonal();
}

struct WlsSolution
{
        Vector coeffs;
        Eigen::Index rank;
        std::vector<Eigen::Index> deficient;
};

// min || yw - xw b || with column equilibration and pivoted QR.
WlsSolution solve_wls(const Matrix& xw, const Vector& yw)
{
        Vector scale(xw.cols());
        for (Eigen::Index k = 0; k < xw.cols(); ++k)
        {
                const double n = xw.col(k).norm();
                scale[k] = n > 0 ? 1.0 / n : 1.0;
        }
        const Matrix xs = xw * scale.asDiagonal();
        Eigen::ColPivHouseholderQR<Matrix> qr(xs);
        qr.setThreshold(1e-13);
        WlsSolution res;
        res.rank = qr.rank();
        if (res.rank < xs.cols())
        {
                const auto& perm = qr.colsPermutation().indices();
                for (Eigen::Index k = res.rank; k < xs.cols(); ++k)
                {
                        res.deficient.push_back(perm[k]);
                }
                std::sort(res.deficient.begin(), res.deficient.end());
                return res;
        }
        res.coeffs = scale.asDiagonal() * qr.solve(yw);
        return res;
}

void fill_fit(FitResult& fit, const Vector& nu_hat, const MomentFunction& f, const Matrix& omega,
              VarianceConvention convention, const ScaleGrid& grid)
{
        fit.fitted_wv = model_wv(fit.theta_hat, convention, grid);
        fit.objective = moment_distance(fit.fitted_wv, nu_hat, f, omega);
}
}

FitResult fit_closed_form(const Vector& nu_hat, const std::vector<Process>& active, VarianceConvention convention,
                          const ScaleGrid& grid, const Matrix& omega, const ClosedFormOptions& options)
{
        const std::size_t p = active.size();
        if (p == 0)
        {
                throw DomainError("no active process to fit");
        }
        if (grid.size() < p)
        {
                throw RankError("need at least as many scales (" + std::to_string(grid.size())
                                + ") as parameters (" + std::to_string(p) + ")");
        }
        if (static_cast<std::size_t>(nu_hat.size()) != grid.size())
        {
                throw DomainError("empirical variance vector does not match the scale grid");
        }

        const Matrix x = design_matrix(active, convention, grid);
        const Matrix u = whitening(omega);
        const Matrix xw = u * x;
        const Vector yw = u * nu_hat;

        {
                const WlsSolution full = solve_wls(xw, yw);
                if (full.rank < static_cast<Eigen::Index>(p))
                {
                        std::ostringstream os;
                        os << "X^T Omega X is singular; columns without independent information:";
                        for (Eigen::Index k : full.deficient)
                        {
                                os << ' ' << process_name(active[k]);
                        }
                        throw RankError(os.str());
                }
        }

        Vector floor(p);
        for (std::size_t k = 0; k < p; ++k)
        {
                double lowest = std::numeric_limits<double>::infinity();
                for (Eigen::Index i = 0; i < x.rows(); ++i)
                {
                        if (nu_hat[i] > 0)
                        {
                                lowest = std::min(lowest, nu_hat[i] / x(i, k));
                        }
                }
                if (!std::isfinite(lowest))
                {
                        lowest = 1.0;
                }
                floor[k] = options.floor_scale * lowest;
        }

        // Active-set projection: coefficients that come out non-positive are
        // pinned to their floor and the remaining ones re-solved.
        std::vector<bool> pinned(p, false);
        Vector coeffs = floor;
        bool projected = false;
        for (std::size_t round = 0; round <= p; ++round)
        {
                std::vector<Eigen::Index> free;
                for (std::size_t k = 0; k < p; ++k)
                {
                        if (!pinned[k])
                        {
                                free.push_back(static_cast<Eigen::Index>(k));
                        }
                }
                if (free.empty())
                {
                        break;
                }
                Vector target = yw;
                Matrix xf(xw.rows(), static_cast<Eigen::Index>(free.size()));
                for (std::size_t k = 0; k < p; ++k)
                {
                        if (pinned[k])
                        {
                                target -= xw.col(k) * floor[k];
                        }
                }
                for (std::size_t c = 0; c < free.size(); ++c)
                {
                        xf.col(c) = xw.col(free[c]);
                }
                const WlsSolution sol = solve_wls(xf, target);
                bool any = false;
                for (std::size_t c = 0; c < free.size(); ++c)
                {
                        if (!(sol.coeffs[c] > 0))
                        {
                                pinned[free[c]] = true;
                                any = true;
                        }
                }
                if (!any)
                {
                        for (std::size_t c = 0; c < free.size(); ++c)
                        {
                                coeffs[free[c]] = sol.coeffs[c];
                        }
                        break;
                }
                projected = true;
        }

        FitResult fit;
        fit.active = active;
        fit.theta_hat = h_inverse(coeffs, active);
        fit.method = {MomentFunction::Kind::Identity, WeightKind::Identity, SolverKind::ClosedForm};
        fit.converged = true;
        fit.iterations = 0;
        fit.projected = projected;
        fill_fit(fit, nu_hat, MomentFunction(), omega, convention, grid);
        return fit;
}

//
// Iterative solver
//

namespace
{
struct Evaluation
{
        Vector residual;
        double value;
};

class LogObjective
{
public:
        LogObjective(const Vector& nu_hat, const std::vector<Process>& active, VarianceConvention convention,
                     const ScaleGrid& grid, const MomentFunction& f, const Matrix& omega)
                : active_(active),
                  x_(design_matrix(active, convention, grid)),
                  f_(f),
                  omega_(omega),
                  target_(f.apply(nu_hat))
        {
                const Vector fd = f.jacobian_diagonal(nu_hat);
                const Vector s = fd.cwiseProduct(nu_hat);
                norm_ = s.dot(omega * s);
                if (!(norm_ > 0))
                {
                        norm_ = 1;
                }
        }

        // h(theta(u)) and dh/du.
        void coefficients(const Vector& u, Vector& h, Vector& dh) const
        {
                h.resize(u.size());
                dh.resize(u.size());
                for (Eigen::Index k = 0; k < u.size(); ++k)
                {
                        if (is_amplitude_parameter(active_[k]))
                        {
                                h[k] = std::exp(2 * u[k]);
                                dh[k] = 2 * h[k];
                        }
                        else
                        {
                                h[k] = std::exp(u[k]);
                                dh[k] = h[k];
                        }
                }
        }

        [[nodiscard]] std::optional<Evaluation> evaluate(const Vector& u) const
        {
                // Parameters must stay positive normal doubles.
                static const double min_log = std::log(std::numeric_limits<double>::min());
                static const double max_log = std::log(std::numeric_limits<double>::max());
                if (!u.allFinite() || u.minCoeff() < min_log || u.maxCoeff() > max_log)
                {
                        return std::nullopt;
                }
                Vector h;
                Vector dh;
                coefficients(u, h, dh);
                const Vector nu = x_ * h;
                if (!nu.allFinite() || (f_.kind() == MomentFunction::Kind::Log10 && !(nu.minCoeff() > 0)))
                {
                        return std::nullopt;
                }
                Evaluation e;
                e.residual = target_ - f_.apply(nu);
                e.value = e.residual.dot(omega_ * e.residual) / norm_;
                if (!std::isfinite(e.value))
                {
                        return std::nullopt;
                }
                return e;
        }

        // Jacobian of f(nu(theta(u))) with respect to u.
        [[nodiscard]] Matrix jacobian(const Vector& u) const
        {
                Vector h;
                Vector dh;
                coefficients(u, h, dh);
                const Vector nu = x_ * h;
                return f_.jacobian_diagonal(nu).asDiagonal() * x_ * dh.asDiagonal();
        }

        [[nodiscard]] const Matrix& omega() const
        {
                return omega_;
        }
        [[nodiscard]] double norm() const
        {
                return norm_;
        }

private:
        std::vector<Process> active_;
        Matrix x_;
        MomentFunction f_;
        Matrix omega_;
        Vector target_;
        double norm_;
};
}

FitResult fit_iterative(const Vector& nu_hat, const std::vector<Process>& active, VarianceConvention convention,
                        const ScaleGrid& grid, const MomentFunction& f, const Matrix& omega,
                        const IterativeOptions& options)
{
        const std::size_t p = active.size();
        if (p == 0)
        {
                throw DomainError("no active process to fit");
        }
        if (grid.size() < p)
        {
                throw RankError("need at least as many scales (" + std::to_string(grid.size())
                                + ") as parameters (" + std::to_string(p) + ")");
        }
        if (!(nu_hat.minCoeff() > 0))
        {
                throw DomainError("iterative fit needs positive empirical variances");
        }
        check_spd(omega, "weight matrix");

        CompositeModel start;
        if (options.start)
        {
                start = *options.start;
                if (start.active_processes() != active)
                {
                        throw DomainError("starting point does not match the active processes");
                }
        }
        else
        {
                // Linearized weight F^T Omega F at nu_hat for the closed-form start.
                const Vector fd = f.jacobian_diagonal(nu_hat);
                const Matrix lin = fd.asDiagonal() * omega * fd.asDiagonal();
                start = fit_closed_form(nu_hat, active, convention, grid, lin).theta_hat;
        }

        const LogObjective objective(nu_hat, active, convention, grid, f, omega);

        Vector u(p);
        for (std::size_t k = 0; k < p; ++k)
        {
                u[k] = std::log(start.get(active[k]));
        }

        std::optional<Evaluation> current = objective.evaluate(u);
        if (!current)
        {
                throw DomainError("objective is not finite at the starting point");
        }

        double lambda = 1e-3;
        bool converged = false;
        int iterations = 0;
        for (; iterations < options.max_iterations; ++iterations)
        {
                const Matrix jac = objective.jacobian(u);
                const Matrix wj = objective.omega() * jac;
                const Vector b = wj.transpose() * current->residual / objective.norm();
                // gradient of the normalized objective is -2 b
                const double grad = 2 * b.cwiseAbs().maxCoeff();
                if (grad < options.gradient_tolerance * (1 + current->value))
                {
                        converged = true;
                        break;
                }
                const Matrix g = jac.transpose() * wj / objective.norm();
                const double diag_floor = 1e-30 * std::max(g.diagonal().maxCoeff(), 1e-300);

                bool accepted = false;
                while (lambda < 1e30)
                {
                        Matrix damped = g;
                        for (Eigen::Index k = 0; k < damped.rows(); ++k)
                        {
                                damped(k, k) += lambda * std::max(g(k, k), diag_floor);
                        }
                        const Vector step = damped.ldlt().solve(b);
                        if (!step.allFinite())
                        {
                                lambda *= 10;
                                continue;
                        }
                        const Vector trial = u + step;
                        std::optional<Evaluation> next = objective.evaluate(trial);
                        if (next && next->value < current->value)
                        {
                                const bool stalled = (trial - u).cwiseAbs().maxCoeff() == 0;
                                u = trial;
                                current = std::move(next);
                                lambda = std::max(lambda / 10, 1e-12);
                                accepted = !stalled;
                                break;
                        }
                        lambda *= 10;
                }
                if (!accepted)
                {
                        // No decrease is possible at working precision.
                        const Matrix jac2 = objective.jacobian(u);
                        const Vector b2 = (objective.omega() * jac2).transpose() * current->residual / objective.norm();
                        converged = 2 * b2.cwiseAbs().maxCoeff() < options.gradient_tolerance * (1 + current->value);
                        if (!converged)
                        {
                                // Gauss-Newton predicted reduction at the working-precision floor.
                                const Matrix g2 = jac2.transpose() * objective.omega() * jac2 / objective.norm();
                                const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(g2);
                                const double predicted = b2.dot(cod.solve(b2));
                                converged = std::isfinite(predicted)
                                            && predicted <= options.reduction_tolerance * current->value;
                        }
                        ++iterations;
                        break;
                }
        }

        FitResult fit;
        fit.active = active;
        Vector theta(p);
        for (std::size_t k = 0; k < p; ++k)
        {
                theta[k] = std::exp(u[k]);
        }
        fit.theta_hat = CompositeModel::from_theta(active, theta);
        fit.method = {f.kind(), WeightKind::Identity, SolverKind::Iterative};
        fit.converged = converged;
        fit.iterations = iterations;
        fill_fit(fit, nu_hat, f, omega, convention, grid);
        return fit;
}

//
// Asymptotic covariance
//

Matrix sandwich_covariance(const Matrix& a, const Matrix& f_jac, const Matrix& omega, const Matrix& v)
{
        const Eigen::Index j = a.rows();
        const Eigen::Index p = a.cols();
        if (f_jac.rows() != j || f_jac.cols() != j || omega.rows() != j || v.rows() != j || v.cols() != j)
        {
                throw DomainError("sandwich dimensions do not match");
        }

        const Matrix omega_star = f_jac.transpose() * omega * f_jac;

        // Equilibrate the columns of A: A = As D^-1.
        Vector d(p);
        for (Eigen::Index k = 0; k < p; ++k)
        {
                const double n = a.col(k).norm();
                d[k] = n > 0 ? 1.0 / n : 1.0;
        }
        const Matrix as = a * d.asDiagonal();
        const Matrix h = as.transpose() * omega_star * as;
        Eigen::FullPivLU<Matrix> lu(h);
        lu.setThreshold(1e-13);
        if (lu.rank() < p)
        {
                throw RankError("H = A^T Omega* A is singular; use more scales or a different weight matrix");
        }
        const Matrix bs = lu.solve(as.transpose() * omega_star);
        const Matrix b = d.asDiagonal() * bs;
        const Matrix sigma = b * v * b.transpose();
        return 0.5 * (sigma + sigma.transpose());
}

AsymptoticCovariance asymptotic_covariance(const CompositeModel& theta_hat, const MomentFunction& f,
                                           const Matrix& omega, const Matrix& v_hat, VarianceConvention convention,
                                           const ScaleGrid& grid)
{
        const Matrix a = jacobian_a(theta_hat, convention, grid);
        const Vector nu = model_wv(theta_hat, convention, grid);
        AsymptoticCovariance res;
        res.cov = sandwich_covariance(a, f.jacobian(nu), omega, v_hat);
        res.std_errors = res.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        return res;
}

//
// Estimator pipelines
//

namespace
{
FitResult solve_with(SolverKind solver, const WvEstimate& est, const std::vector<Process>& active,
                     const MomentFunction& f, const Matrix& omega, const EstimateOptions& options)
{
        if (solver == SolverKind::ClosedForm && f.kind() == MomentFunction::Kind::Identity)
        {
                return fit_closed_form(est.nu_hat, active, est.convention, est.grid, omega, options.closed_form);
        }
        return fit_iterative(est.nu_hat, active, est.convention, est.grid, f, omega, options.iterative);
}
}

FitResult estimate(const MethodDescriptor& method, const WvEstimate& est, const std::vector<Process>& active,
                   const EstimateOptions& options)
{
        if (method.solver == SolverKind::Avsm)
        {
                FitResult fit = fit_avsm(est, active, options.avsm);
                fit.method = method;
                return fit;
        }

        const MomentFunction f(method.f);
        const SolverKind inner = method.solver == SolverKind::TwoStep
                                         ? (f.kind() == MomentFunction::Kind::Identity ? SolverKind::ClosedForm
                                                                                      : SolverKind::Iterative)
                                         : method.solver;
        if (method.solver == SolverKind::ClosedForm && f.kind() != MomentFunction::Kind::Identity)
        {
                throw DomainError("the closed form applies to the identity moment function only");
        }

        // V_hat: estimated covariance when available, else diag(2 nu^2 / N) at nu_at.
        auto v_at = [&](const Vector& nu_at) -> Matrix
        {
                if (est.cov_hat)
                {
                        return *est.cov_hat;
                }
                return diagonal_large_sample_cov(nu_at, est.coeff_counts);
        };

        FitResult fit;
        Matrix omega;
        if (method.solver == SolverKind::TwoStep)
        {
                const Matrix first_omega = weight_matrix(WeightKind::DiagInverseSquared, est, f);
                const FitResult first = solve_with(inner, est, active, f, first_omega, options);
                const Matrix v = v_at(first.fitted_wv);
                omega = weight_matrix(method.omega, est, f, first.fitted_wv, v);
                EstimateOptions second = options;
                if (inner == SolverKind::Iterative)
                {
                        second.iterative.start = first.theta_hat;
                }
                fit = solve_with(inner, est, active, f, omega, second);
                fit.iterations += first.iterations;
                fit.converged = fit.converged && first.converged;
                fit.projected = fit.projected || first.projected;
        }
        else
        {
                const Vector nu_at = est.nu_hat;
                std::optional<Matrix> v;
                if (method.omega == WeightKind::EstimatedVInverse || method.omega == WeightKind::OptimalOmega)
                {
                        v = v_at(nu_at);
                }
                omega = weight_matrix(method.omega, est, f, nu_at, v);
                fit = solve_with(inner, est, active, f, omega, options);
        }
        fit.method = method;

        if (options.compute_covariance)
        {
                try
                {
                        const Matrix v = v_at(fit.fitted_wv);
                        const AsymptoticCovariance ac =
                                asymptotic_covariance(fit.theta_hat, f, omega, v, est.convention, est.grid);
                        fit.asymptotic_cov = ac.cov;
                        fit.std_errors = ac.std_errors;
                }
                catch (const RankError&)
                {
                        fit.asymptotic_cov.reset();
                        fit.std_errors = Vector::Constant(active.size(), std::numeric_limits<double>::quiet_NaN());
                }
        }
        return fit;
}

//
// Moment bias probe
//

MomentBias moment_bias_probe(const CompositeModel& truth, const MomentFunction& f, std::size_t length,
                             std::size_t reps, std::uint64_t seed, VarianceConvention convention,
                             std::optional<std::vector<int>> levels, std::size_t workers)
{
        if (reps < 100)
        {
                throw DomainError("moment bias probe needs at least 100 replications");
        }
        const ScaleGrid grid = levels ? ScaleGrid(*levels, length) : ScaleGrid::with_min_coeffs(length);
        const Vector target = f.apply(model_wv(truth, convention, grid));

        std::vector<Vector> diffs(reps);
        parallel_for(reps, workers,
                     [&](std::size_t r)
                     {
                             const Signal s = simulate({truth, length, derive_seed(seed, {r}), 1.0});
                             diffs[r] = f.apply(empirical_wv(s, grid, convention).nu_hat) - target;
                     });

        const Eigen::Index j = static_cast<Eigen::Index>(grid.size());
        Vector mean = Vector::Zero(j);
        for (const Vector& d : diffs)
        {
                mean += d;
        }
        mean /= static_cast<double>(reps);
        Vector var = Vector::Zero(j);
        for (const Vector& d : diffs)
        {
                var += (d - mean).cwiseAbs2();
        }
        var /= static_cast<double>(reps - 1);

        MomentBias res;
        res.levels = grid.levels();
        res.bias = mean;
        res.std_error = (var / static_cast<double>(reps)).cwiseSqrt();
        res.reps = reps;
        return res;
}
}
