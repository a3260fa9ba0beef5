#include <wvcal/error.hpp>
#include <wvcal/model.hpp>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace wvcal
{
namespace
{
// 2 ln 2 / pi, the flat bias-instability term.
constexpr double BI_FACTOR = 2.0 * std::numbers::ln2 / std::numbers::pi;

double design_entry(Process p, int level)
{
        const double m = std::ldexp(1.0, level);
        switch (p)
        {
        case Process::QN:
                return 3.0 / (m * m);
        case Process::WN:
                return 1.0 / m;
        case Process::BI:
                return BI_FACTOR;
        case Process::RW:
                return m / 3.0;
        case Process::DR:
                return m * m / 2.0;
        }
        return 0;
}
}

std::string_view process_name(Process p)
{
        switch (p)
        {
        case Process::QN:
                return "QN";
        case Process::WN:
                return "WN";
        case Process::BI:
                return "BI";
        case Process::RW:
                return "RW";
        case Process::DR:
                return "DR";
        }
        return "?";
}

std::string_view parameter_name(Process p)
{
        switch (p)
        {
        case Process::QN:
                return "q2";
        case Process::WN:
                return "sigma2";
        case Process::BI:
                return "b";
        case Process::RW:
                return "gamma2";
        case Process::DR:
                return "omega";
        }
        return "?";
}

Process parse_process(std::string_view name)
{
        for (Process p : ALL_PROCESSES)
        {
                if (process_name(p) == name)
                {
                        return p;
                }
        }
        throw ParseError("unknown process '" + std::string(name) + "' (expected QN, WN, BI, RW or DR)");
}

int characteristic_slope(Process p)
{
        switch (p)
        {
        case Process::QN:
                return -2;
        case Process::WN:
                return -1;
        case Process::BI:
                return 0;
        case Process::RW:
                return 1;
        case Process::DR:
                return 2;
        }
        return 0;
}

double convention_factor(VarianceConvention c)
{
        return c == VarianceConvention::Allan ? 1.0 : 0.5;
}

std::string_view convention_name(VarianceConvention c)
{
        return c == VarianceConvention::Allan ? "av" : "wv";
}

VarianceConvention parse_convention(std::string_view s)
{
        if (s == "av")
        {
                return VarianceConvention::Allan;
        }
        if (s == "wv")
        {
                return VarianceConvention::HaarWavelet;
        }
        throw ParseError("unknown variance convention '" + std::string(s) + "' (expected av or wv)");
}

//
// CompositeModel
//

CompositeModel& CompositeModel::set(Process p, double value)
{
        if (!(value > 0) || !std::isfinite(value))
        {
                std::ostringstream os;
                os << "parameter " << parameter_name(p) << " of " << process_name(p) << " must be positive and finite, got "
                   << value;
                throw DomainError(os.str());
        }
        params_[index(p)] = value;
        return *this;
}

double CompositeModel::get(Process p) const
{
        if (!active(p))
        {
                throw DomainError("process " + std::string(process_name(p)) + " is not part of the model");
        }
        return *params_[index(p)];
}

std::vector<Process> CompositeModel::active_processes() const
{
        std::vector<Process> res;
        for (Process p : ALL_PROCESSES)
        {
                if (active(p))
                {
                        res.push_back(p);
                }
        }
        return res;
}

std::size_t CompositeModel::size() const
{
        std::size_t n = 0;
        for (const auto& v : params_)
        {
                n += v.has_value() ? 1 : 0;
        }
        return n;
}

Vector CompositeModel::theta() const
{
        const std::vector<Process> active = active_processes();
        Vector res(active.size());
        for (std::size_t k = 0; k < active.size(); ++k)
        {
                res[k] = get(active[k]);
        }
        return res;
}

CompositeModel CompositeModel::from_theta(const std::vector<Process>& active, const Vector& theta)
{
        if (static_cast<std::size_t>(theta.size()) != active.size())
        {
                throw DomainError("parameter vector size does not match the number of active processes");
        }
        CompositeModel m;
        for (std::size_t k = 0; k < active.size(); ++k)
        {
                m.set(active[k], theta[k]);
        }
        return m;
}

//
// ScaleGrid
//

ScaleGrid::ScaleGrid(std::vector<int> levels, std::size_t sample_count)
        : levels_(std::move(levels)), sample_count_(sample_count)
{
        if (levels_.empty())
        {
                throw RankError("scale grid has no levels");
        }
        for (std::size_t k = 0; k < levels_.size(); ++k)
        {
                const int j = levels_[k];
                if (j < 1 || j > 60)
                {
                        throw RankError("scale level " + std::to_string(j) + " is out of range (levels start at 1)");
                }
                if (k > 0 && j <= levels_[k - 1])
                {
                        throw RankError("scale levels must be strictly increasing");
                }
                // N_j = T - 2^(j+1) + 1 >= 1
                if (2 * half_window(j) > sample_count_)
                {
                        throw RankError("scale level " + std::to_string(j) + " needs at least "
                                        + std::to_string(2 * half_window(j)) + " samples but the signal has "
                                        + std::to_string(sample_count_));
                }
        }
}

ScaleGrid ScaleGrid::first_levels(int count, std::size_t sample_count)
{
        std::vector<int> levels;
        for (int j = 1; j <= count; ++j)
        {
                levels.push_back(j);
        }
        return {std::move(levels), sample_count};
}

ScaleGrid ScaleGrid::with_min_coeffs(std::size_t sample_count, std::size_t min_coeffs)
{
        min_coeffs = std::max<std::size_t>(min_coeffs, 1);
        std::vector<int> levels;
        for (int j = 1; j < 60; ++j)
        {
                const std::size_t support = 2 * half_window(j);
                if (support > sample_count || sample_count - support + 1 < min_coeffs)
                {
                        break;
                }
                levels.push_back(j);
        }
        if (levels.empty())
        {
                throw RankError("signal of " + std::to_string(sample_count) + " samples supports no scale with "
                                + std::to_string(min_coeffs) + " coefficients");
        }
        return {std::move(levels), sample_count};
}

std::size_t ScaleGrid::coeff_count(std::size_t k) const
{
        return sample_count_ - 2 * half_window(levels_[k]) + 1;
}

std::vector<std::size_t> ScaleGrid::coeff_counts() const
{
        std::vector<std::size_t> res(levels_.size());
        for (std::size_t k = 0; k < levels_.size(); ++k)
        {
                res[k] = coeff_count(k);
        }
        return res;
}

//
// Model variance
//

Matrix design_matrix(const std::vector<Process>& active, VarianceConvention convention, const std::vector<int>& levels)
{
        const double c = convention_factor(convention);
        Matrix x(levels.size(), active.size());
        for (std::size_t i = 0; i < levels.size(); ++i)
        {
                for (std::size_t k = 0; k < active.size(); ++k)
                {
                        x(i, k) = c * design_entry(active[k], levels[i]);
                }
        }
        return x;
}

Matrix design_matrix(const std::vector<Process>& active, VarianceConvention convention, const ScaleGrid& grid)
{
        return design_matrix(active, convention, grid.levels());
}

Vector h_map(const CompositeModel& model)
{
        const std::vector<Process> active = model.active_processes();
        Vector res(active.size());
        for (std::size_t k = 0; k < active.size(); ++k)
        {
                const double v = model.get(active[k]);
                res[k] = is_amplitude_parameter(active[k]) ? v * v : v;
        }
        return res;
}

CompositeModel h_inverse(const Vector& coeffs, const std::vector<Process>& active)
{
        if (static_cast<std::size_t>(coeffs.size()) != active.size())
        {
                throw DomainError("coefficient vector size does not match the number of active processes");
        }
        CompositeModel m;
        for (std::size_t k = 0; k < active.size(); ++k)
        {
                const double v = coeffs[k];
                if (!(v > 0))
                {
                        std::ostringstream os;
                        os << "cannot invert coefficient " << v << " of " << process_name(active[k])
                           << ": linear coefficients must be positive";
                        throw DomainError(os.str());
                }
                m.set(active[k], is_amplitude_parameter(active[k]) ? std::sqrt(v) : v);
        }
        return m;
}

Vector model_wv(const CompositeModel& model, VarianceConvention convention, const ScaleGrid& grid)
{
        const std::vector<Process> active = model.active_processes();
        if (active.empty())
        {
                throw DomainError("model has no active process");
        }
        return design_matrix(active, convention, grid) * h_map(model);
}

Matrix jacobian_a(const CompositeModel& model, VarianceConvention convention, const ScaleGrid& grid)
{
        const std::vector<Process> active = model.active_processes();
        Matrix a = design_matrix(active, convention, grid);
        for (std::size_t k = 0; k < active.size(); ++k)
        {
                if (is_amplitude_parameter(active[k]))
                {
                        a.col(k) *= 2 * model.get(active[k]);
                }
        }
        return a;
}

//
// JSON model specification
//

ModelSpec parse_model_spec(std::string_view json_text)
{
        nlohmann::json j;
        try
        {
                j = nlohmann::json::parse(json_text);
        }
        catch (const nlohmann::json::exception& e)
        {
                throw ParseError(std::string("model specification is not valid JSON: ") + e.what());
        }

        ModelSpec spec;
        if (j.contains("convention"))
        {
                spec.convention = parse_convention(j.at("convention").get<std::string>());
        }
        if (!j.contains("processes") || !j.at("processes").is_object())
        {
                throw ParseError("model specification needs a \"processes\" object");
        }
        for (Process p : ALL_PROCESSES)
        {
                const std::string name(process_name(p));
                if (!j.at("processes").contains(name))
                {
                        continue;
                }
                spec.active.push_back(p);
                const nlohmann::json& entry = j.at("processes").at(name);
                const std::string key(parameter_name(p));
                if (entry.is_object() && entry.contains(key))
                {
                        spec.model.set(p, entry.at(key).get<double>());
                }
        }
        for (const auto& [name, value] : j.at("processes").items())
        {
                (void)value;
                parse_process(name);
        }
        if (spec.active.empty())
        {
                throw ParseError("model specification has no processes");
        }
        return spec;
}

ModelSpec load_model_spec(const std::string& path)
{
        std::ifstream in(path);
        if (!in)
        {
                throw IoError("cannot open model file '" + path + "'");
        }
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_model_spec(ss.str());
}

std::string model_spec_json(const CompositeModel& model, VarianceConvention convention)
{
        nlohmann::ordered_json j;
        j["processes"] = nlohmann::ordered_json::object();
        for (Process p : model.active_processes())
        {
                j["processes"][std::string(process_name(p))][std::string(parameter_name(p))] = model.get(p);
        }
        j["convention"] = std::string(convention_name(convention));
        return j.dump(2);
}
}
