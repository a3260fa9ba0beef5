#pragma once

#include <wvcal/fit.hpp>
#include <wvcal/model.hpp>
#include <wvcal/units.hpp>
#include <wvcal/wv.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wvcal
{
struct MethodSpec
{
        std::string label;
        MethodDescriptor descriptor;
};

struct GridPolicy
{
        // Explicit levels win over the coefficient floor.
        std::optional<std::vector<int>> levels;
        std::size_t min_coeffs = 16;

        [[nodiscard]] ScaleGrid grid_for(std::size_t length) const;
};

enum class CovPolicy
{
        // Block bootstrap when the signal is long enough, else none (the
        // estimators then use the diagonal form at the fitted variance).
        Auto,
        Diagonal,
        Bootstrap,
};

struct Experiment
{
        CompositeModel truth;
        VarianceConvention convention = VarianceConvention::Allan;
        std::size_t length = 1 << 18;
        std::size_t reps = 300;
        std::uint64_t seed = 1;
        double sample_rate_hz = 250.0;
        std::vector<MethodSpec> methods;
        GridPolicy grid;
        CovPolicy cov = CovPolicy::Auto;
        // Replace nu_hat by nu(truth) (degenerate check of the harness).
        bool noiseless = false;
        // Units the truth was given in; informational, estimates stay per-sample.
        std::optional<UnitSpec> units;
        std::size_t workers = 1;
};

void validate(const Experiment& exp);

struct ParameterSummary
{
        std::string method;
        Process process;
        double truth = 0;
        double mean = 0;
        double bias = 0;
        double sd = 0;
        double rmse = 0;
        // 5, 25, 50, 75, 95 %
        std::array<double, 5> quantiles{};
        std::size_t count = 0;
        std::size_t failures = 0;
};

struct ReplicationRecord
{
        std::size_t replication = 0;
        std::string method;
        // Estimate per truth process; empty when that parameter failed.
        std::map<Process, std::optional<double>> estimates;
        std::uint64_t input_hash = 0;
        bool converged = false;
        std::string error;
};

struct McSummary
{
        std::vector<ParameterSummary> rows;
        std::vector<ReplicationRecord> raw;
        // Methods for which every replication failed, with the first error seen.
        std::map<std::string, std::string> method_errors;
        std::vector<Process> parameters;
        std::vector<std::string> methods;
        std::size_t reps = 0;

        [[nodiscard]] const ParameterSummary& row(const std::string& method, Process p) const;
};

McSummary run_experiment(const Experiment& exp);

// Moments of a sample of estimates against the truth.
ParameterSummary summarize(const std::string& method, Process p, double truth, const std::vector<double>& estimates,
                           std::size_t failures);

struct RankEntry
{
        std::string method;
        double rmse = 0;
        // 1-based; tied methods share a rank.
        std::size_t rank = 0;
};

struct Ranking
{
        Process process;
        std::vector<RankEntry> entries;
};

// Per parameter, methods ordered by rmse; relative differences below 1e-12 are ties.
std::vector<Ranking> compare_methods(const McSummary& summary);

// Fraction of replication-bootstrap resamples in which rmse(a) <= rmse(b) for p.
double rank_confidence(const McSummary& summary, const std::string& a, const std::string& b, Process p,
                       std::size_t resamples = 1000, std::uint64_t seed = 7);

// boxplot.csv (method, parameter, replication, estimate) and
// rmse.csv (method, parameter, bias, sd, rmse, failures) under `dir`.
void emit_figure_data(const McSummary& summary, const std::string& dir);

struct RmseRow
{
        std::string method;
        std::string parameter;
        double bias = 0;
        double sd = 0;
        double rmse = 0;
        std::size_t failures = 0;
};

std::vector<RmseRow> read_rmse_csv(const std::string& path);

std::string summary_json(const McSummary& summary);

// Experiment JSON: {"truth": {"processes": {...}} or {"physical": {"WN": 0.157, ...},
// "quantity": "gyro_rate"}, "T", "reps", "seed", "sample_rate_hz", "methods",
// "convention", "grid": {"levels": [...]} | {"min_coeffs": n}, "cov", "noiseless"}.
Experiment parse_experiment(const std::string& json_text);
}
