#pragma once

#include <wvcal/model.hpp>
#include <wvcal/wv.hpp>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wvcal
{
// Moment function f applied elementwise to a positive variance vector.
class MomentFunction
{
public:
        enum class Kind
        {
                Identity,
                Log10,
        };

        MomentFunction() = default;
        explicit MomentFunction(Kind kind) : kind_(kind)
        {
        }

        [[nodiscard]] Kind kind() const
        {
                return kind_;
        }

        // Throws DomainError for Log10 on a non-positive entry.
        [[nodiscard]] Vector apply(const Vector& x) const;
        // Diagonal of the Jacobian F(x): ones, or 1 / (x ln 10).
        [[nodiscard]] Vector jacobian_diagonal(const Vector& x) const;
        [[nodiscard]] Matrix jacobian(const Vector& x) const;

private:
        Kind kind_ = Kind::Identity;
};

std::string_view moment_name(MomentFunction::Kind k);
MomentFunction::Kind parse_moment(std::string_view s);

enum class WeightKind
{
        Identity,
        // diag(N_j / nu_hat_j^2) carried through f: divided by F_jj^2
        DiagInverseSquared,
        // V_hat^-1
        EstimatedVInverse,
        // (F V_hat F^T)^-1
        OptimalOmega,
};

std::string_view weight_name(WeightKind k);
WeightKind parse_weight(std::string_view s);

enum class SolverKind
{
        ClosedForm,
        Iterative,
        // First pass with DiagInverseSquared, second pass with the optimal weight.
        TwoStep,
        Avsm,
};

std::string_view solver_name(SolverKind k);
SolverKind parse_solver(std::string_view s);

struct MethodDescriptor
{
        MomentFunction::Kind f = MomentFunction::Kind::Identity;
        WeightKind omega = WeightKind::DiagInverseSquared;
        SolverKind solver = SolverKind::ClosedForm;

        friend bool operator==(const MethodDescriptor&, const MethodDescriptor&) = default;
};

// gmwm: identity f, two-step with optimal weight.
// armav: log10 f, diag(N/nu^2) weight, iterative.
// avsm: slope method.
MethodDescriptor named_method(std::string_view name);

// Checks symmetry and positive definiteness after scaling to unit diagonal:
// the minimum eigenvalue must exceed 1e-12 times the trace (= J).
void check_spd(const Matrix& m, std::string_view what);

// Realized weight matrix. `nu_at_theta` is where F is evaluated for the
// optimal weight (defaults to nu_hat); V is taken from `v_hat` when given,
// else from est.cov_hat.
Matrix weight_matrix(WeightKind kind, const WvEstimate& est, const MomentFunction& f,
                     const std::optional<Vector>& nu_at_theta = std::nullopt,
                     const std::optional<Matrix>& v_hat = std::nullopt);

struct FitResult
{
        CompositeModel theta_hat;
        std::vector<Process> active;
        double objective = 0;
        Vector fitted_wv;
        std::optional<Matrix> asymptotic_cov;
        Vector std_errors;
        MethodDescriptor method;
        bool converged = false;
        int iterations = 0;
        // Closed form hit the positivity floor for at least one coefficient.
        bool projected = false;
        // Processes the slope method could not estimate, with the reason.
        std::map<Process, std::string> failures;
};

// || f(nu_hat) - f(nu_model) ||^2_Omega
double moment_distance(const Vector& nu_model, const Vector& nu_hat, const MomentFunction& f, const Matrix& omega);
double gmwfm_objective(const CompositeModel& theta, const Vector& nu_hat, const MomentFunction& f, const Matrix& omega,
                       VarianceConvention convention, const ScaleGrid& grid);

struct ClosedFormOptions
{
        // Projected coefficients are clamped to floor_scale * min_j(nu_hat_j / X_jk).
        double floor_scale = 1e-12;
};

// Weighted least squares on the linear form nu = X h(theta) followed by h^-1.
FitResult fit_closed_form(const Vector& nu_hat, const std::vector<Process>& active, VarianceConvention convention,
                          const ScaleGrid& grid, const Matrix& omega, const ClosedFormOptions& options = {});

struct IterativeOptions
{
        int max_iterations = 500;
        double gradient_tolerance = 1e-9;
        // When no step decreases the objective, a relative Gauss-Newton
        // predicted reduction below this also counts as convergence.
        double reduction_tolerance = 1e-12;
        // Starting point; by default the closed-form solution under F^T Omega F at nu_hat.
        std::optional<CompositeModel> start;
};

// Damped Gauss-Newton minimization of the GMWFM objective in log-parameters.
FitResult fit_iterative(const Vector& nu_hat, const std::vector<Process>& active, VarianceConvention convention,
                        const ScaleGrid& grid, const MomentFunction& f, const Matrix& omega,
                        const IterativeOptions& options = {});

struct AsymptoticCovariance
{
        Matrix cov;
        Vector std_errors;
};

// Sandwich B V B^T with Omega* = F^T Omega F, H = A^T Omega* A, B = H^-1 A^T Omega*.
// v_hat is the covariance of nu_hat, so the result is the finite-sample
// covariance of theta_hat.
AsymptoticCovariance asymptotic_covariance(const CompositeModel& theta_hat, const MomentFunction& f,
                                           const Matrix& omega, const Matrix& v_hat, VarianceConvention convention,
                                           const ScaleGrid& grid);

// Same sandwich from an explicit Jacobian A and moment Jacobian F.
Matrix sandwich_covariance(const Matrix& a, const Matrix& f_jac, const Matrix& omega, const Matrix& v);

// (F V F^T)^-1 with F evaluated at nu_at_theta.
Matrix optimal_omega(const MomentFunction& f, const Matrix& v_hat, const Vector& nu_at_theta);

struct AvsmOptions
{
        double slope_tolerance = 0.35;
};

FitResult fit_avsm(const WvEstimate& est, const std::vector<Process>& active, const AvsmOptions& options = {});

struct EstimateOptions
{
        ClosedFormOptions closed_form;
        IterativeOptions iterative;
        AvsmOptions avsm;
        bool compute_covariance = true;
};

// Runs one estimator on an empirical WV. V_hat comes from est.cov_hat when
// present, otherwise from the diagonal large-sample form at the fitted WV.
FitResult estimate(const MethodDescriptor& method, const WvEstimate& est, const std::vector<Process>& active,
                   const EstimateOptions& options = {});

struct MomentBias
{
        std::vector<int> levels;
        Vector bias;
        Vector std_error;
        std::size_t reps = 0;
};

// Mean over replications of f(nu_hat) - f(nu(theta0)) and its MC standard error.
MomentBias moment_bias_probe(const CompositeModel& truth, const MomentFunction& f, std::size_t length,
                             std::size_t reps, std::uint64_t seed,
                             VarianceConvention convention = VarianceConvention::Allan,
                             std::optional<std::vector<int>> levels = std::nullopt, std::size_t workers = 1);
}
