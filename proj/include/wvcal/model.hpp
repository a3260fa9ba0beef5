#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wvcal
{
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Latent processes of the composite error model, in canonical order
// (shortest-scale dominant first).
enum class Process : std::uint8_t
{
        QN = 0,
        WN = 1,
        BI = 2,
        RW = 3,
        DR = 4,
};

inline constexpr std::array<Process, 5> ALL_PROCESSES = {Process::QN, Process::WN, Process::BI, Process::RW,
                                                         Process::DR};

std::string_view process_name(Process p);
// Name of the stored parameter: q2, sigma2, b, gamma2, omega.
std::string_view parameter_name(Process p);
Process parse_process(std::string_view name);

// Characteristic log-log slope of the Allan variance against the half-window.
int characteristic_slope(Process p);

// Which parameters enter the model variance squared (B and omega).
constexpr bool is_amplitude_parameter(Process p)
{
        return p == Process::BI || p == Process::DR;
}

enum class VarianceConvention : std::uint8_t
{
        Allan,
        HaarWavelet,
};

// c = 1 for the Allan variance, 1/2 for the Haar wavelet variance.
double convention_factor(VarianceConvention c);
std::string_view convention_name(VarianceConvention c);
VarianceConvention parse_convention(std::string_view s);

// Composite stochastic model. Parameters are in per-sample units:
//   QN: Q^2, WN: sigma^2, BI: B, RW: gamma^2, DR: omega.
// Inactive processes are absent; every present parameter is strictly positive.
class CompositeModel
{
public:
        CompositeModel() = default;

        // Throws DomainError unless value > 0 and finite.
        CompositeModel& set(Process p, double value);

        [[nodiscard]] bool active(Process p) const
        {
                return params_[index(p)].has_value();
        }
        [[nodiscard]] double get(Process p) const;

        [[nodiscard]] std::vector<Process> active_processes() const;
        [[nodiscard]] std::size_t size() const;

        // Parameters of the active processes in canonical order.
        [[nodiscard]] Vector theta() const;
        static CompositeModel from_theta(const std::vector<Process>& active, const Vector& theta);

        friend bool operator==(const CompositeModel&, const CompositeModel&) = default;

private:
        static std::size_t index(Process p)
        {
                return static_cast<std::size_t>(p);
        }

        std::array<std::optional<double>, 5> params_{};
};

// Dyadic levels j with half-window 2^j samples and full Haar support 2^(j+1).
class ScaleGrid
{
public:
        ScaleGrid(std::vector<int> levels, std::size_t sample_count);

        // Levels 1..J.
        static ScaleGrid first_levels(int count, std::size_t sample_count);
        // Every level with at least min_coeffs coefficients.
        static ScaleGrid with_min_coeffs(std::size_t sample_count, std::size_t min_coeffs = 16);

        [[nodiscard]] const std::vector<int>& levels() const
        {
                return levels_;
        }
        [[nodiscard]] std::size_t size() const
        {
                return levels_.size();
        }
        [[nodiscard]] std::size_t sample_count() const
        {
                return sample_count_;
        }
        [[nodiscard]] int level(std::size_t k) const
        {
                return levels_[k];
        }

        static std::size_t half_window(int level)
        {
                return std::size_t{1} << level;
        }

        [[nodiscard]] std::size_t coeff_count(std::size_t k) const;
        [[nodiscard]] std::vector<std::size_t> coeff_counts() const;

private:
        std::vector<int> levels_;
        std::size_t sample_count_;
};

// nu_j(theta) for every level of the grid.
Vector model_wv(const CompositeModel& model, VarianceConvention convention, const ScaleGrid& grid);

// Rows c * [3/4^j, 1/2^j, 2 ln2 / pi, 2^j / 3, 2^(2j-1)] restricted to active columns.
Matrix design_matrix(const std::vector<Process>& active, VarianceConvention convention, const ScaleGrid& grid);
Matrix design_matrix(const std::vector<Process>& active, VarianceConvention convention, const std::vector<int>& levels);

// h maps theta to the linear coefficients (Q^2, sigma^2, B^2, gamma^2, omega^2).
Vector h_map(const CompositeModel& model);
// Positive square roots for B and omega; throws DomainError on non-positive entries.
CompositeModel h_inverse(const Vector& coeffs, const std::vector<Process>& active);

// d nu / d theta^T = X * diag(dh/dtheta).
Matrix jacobian_a(const CompositeModel& model, VarianceConvention convention, const ScaleGrid& grid);

// Model specification file: {"processes": {"WN": {"sigma2": ...}, ...}, "convention": "av"|"wv"}.
struct ModelSpec
{
        CompositeModel model;
        std::vector<Process> active;
        VarianceConvention convention = VarianceConvention::Allan;
};

ModelSpec parse_model_spec(std::string_view json_text);
ModelSpec load_model_spec(const std::string& path);
std::string model_spec_json(const CompositeModel& model, VarianceConvention convention);
}
