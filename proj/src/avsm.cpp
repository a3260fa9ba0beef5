#include <wvcal/error.hpp>
#include <wvcal/fit.hpp>

#include <cmath>
#include <sstream>

namespace wvcal
{
namespace
{
struct Run
{
        // Slope indices [first, last]; the run covers levels first..last+1.
        std::size_t first;
        std::size_t last;

        [[nodiscard]] std::size_t length() const
        {
                return last - first + 1;
        }
};

std::vector<Run> qualifying_runs(const std::vector<double>& slopes, double target, double tolerance)
{
        std::vector<Run> runs;
        std::optional<std::size_t> open;
        for (std::size_t k = 0; k <= slopes.size(); ++k)
        {
                const bool ok = k < slopes.size() && std::isfinite(slopes[k]) && std::abs(slopes[k] - target) <= tolerance;
                if (ok && !open)
                {
                        open = k;
                }
                else if (!ok && open)
                {
                        runs.push_back({*open, k - 1});
                        open.reset();
                }
        }
        return runs;
}

// Longest run; ties go to the shortest scales for QN, WN and BI and to the
// longest scales for RW and DR.
Run pick_run(const std::vector<Run>& runs, Process p)
{
        const bool prefer_late = p == Process::RW || p == Process::DR;
        Run best = runs.front();
        for (const Run& r : runs)
        {
                if (r.length() > best.length() || (prefer_late && r.length() == best.length()))
                {
                        best = r;
                }
        }
        return best;
}
}

FitResult fit_avsm(const WvEstimate& est, const std::vector<Process>& active, const AvsmOptions& options)
{
        if (est.convention != VarianceConvention::Allan)
        {
                throw DomainError("the slope method works on the Allan variance convention");
        }
        if (est.grid.size() < 2)
        {
                throw RankError("the slope method needs at least two levels");
        }
        if (active.empty())
        {
                throw DomainError("no active process to fit");
        }

        const std::size_t levels = est.grid.size();
        std::vector<double> slopes(levels - 1);
        for (std::size_t k = 0; k + 1 < levels; ++k)
        {
                const double a = est.nu_hat[k];
                const double b = est.nu_hat[k + 1];
                const double dj = est.grid.level(k + 1) - est.grid.level(k);
                slopes[k] = (a > 0 && b > 0) ? std::log2(b / a) / dj : std::numeric_limits<double>::quiet_NaN();
        }

        const Matrix x = design_matrix(active, est.convention, est.grid);

        FitResult fit;
        fit.method = {MomentFunction::Kind::Identity, WeightKind::Identity, SolverKind::Avsm};
        std::vector<Process> estimated;
        std::vector<double> coeffs;
        for (std::size_t c = 0; c < active.size(); ++c)
        {
                const Process p = active[c];
                const int target = characteristic_slope(p);
                const std::vector<Run> runs = qualifying_runs(slopes, target, options.slope_tolerance);
                if (runs.empty())
                {
                        std::ostringstream os;
                        os << "no run of levels with log-log slope within " << options.slope_tolerance << " of "
                           << target;
                        fit.failures.emplace(p, os.str());
                        continue;
                }
                const Run run = pick_run(runs, p);

                // Weighted mean of the per-level log coefficient.
                double sum = 0;
                double weight = 0;
                for (std::size_t k = run.first; k <= run.last + 1; ++k)
                {
                        const double w = static_cast<double>(est.coeff_counts[k]);
                        sum += w * std::log(est.nu_hat[k] / x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
                        weight += w;
                }
                estimated.push_back(p);
                coeffs.push_back(std::exp(sum / weight));
        }

        fit.active = estimated;
        if (!estimated.empty())
        {
                fit.theta_hat = h_inverse(Eigen::Map<const Vector>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size())),
                                          estimated);
                fit.fitted_wv = model_wv(fit.theta_hat, est.convention, est.grid);
                fit.objective = (est.nu_hat - fit.fitted_wv).squaredNorm();
        }
        else
        {
                fit.fitted_wv = Vector::Zero(static_cast<Eigen::Index>(levels));
                fit.objective = est.nu_hat.squaredNorm();
        }
        fit.std_errors = Vector::Constant(static_cast<Eigen::Index>(estimated.size()), std::numeric_limits<double>::quiet_NaN());
        fit.converged = fit.failures.empty();
        return fit;
}
}
