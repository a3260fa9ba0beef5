#include <wvcal/error.hpp>
#include <wvcal/units.hpp>

#include <cmath>
#include <vector>

namespace wvcal
{
namespace
{
constexpr std::string_view SUPPORTED =
        "base deg | rad | m/s, then /s, /min, /hr, /h, /sqrt(s), /sqrt(min), /sqrt(hr), /sqrt(h), /√s, /√hr";

std::vector<std::string> split(std::string_view s, char sep)
{
        std::vector<std::string> res;
        std::string cur;
        for (char c : s)
        {
                if (c == sep)
                {
                        res.push_back(cur);
                        cur.clear();
                }
                else if (c != ' ')
                {
                        cur.push_back(c);
                }
        }
        res.push_back(cur);
        return res;
}

double seconds_in(const std::string& unit, std::string_view token)
{
        if (unit == "s")
        {
                return 1;
        }
        if (unit == "min")
        {
                return 60;
        }
        if (unit == "hr" || unit == "h")
        {
                return 3600;
        }
        throw ParseError("unknown time unit '" + unit + "' in '" + std::string(token) + "'; supported tokens: "
                         + std::string(SUPPORTED));
}

double expected_time_exponent(Process p)
{
        switch (p)
        {
        case Process::QN:
                return 0;
        case Process::WN:
                return 0.5;
        case Process::BI:
                return 1;
        case Process::RW:
                return 1.5;
        case Process::DR:
                return 2;
        }
        return 0;
}
}

Quantity parse_quantity(std::string_view s)
{
        if (s == "gyro_rate" || s == "gyro")
        {
                return Quantity::GyroRate;
        }
        if (s == "accel")
        {
                return Quantity::Accel;
        }
        throw ParseError("unknown quantity '" + std::string(s) + "' (expected gyro_rate or accel)");
}

std::string_view quantity_name(Quantity q)
{
        return q == Quantity::GyroRate ? "gyro_rate" : "accel";
}

std::string default_unit(Quantity q, Process p)
{
        const std::string base = q == Quantity::GyroRate ? "deg" : "m/s";
        switch (p)
        {
        case Process::QN:
                return base;
        case Process::WN:
                return base + "/sqrt(hr)";
        case Process::BI:
                return base + "/hr";
        case Process::RW:
                return base + "/hr/sqrt(hr)";
        case Process::DR:
                return base + "/hr/hr";
        }
        return base;
}

std::string UnitSpec::token(Process p) const
{
        const auto it = tokens.find(p);
        return it != tokens.end() ? it->second : default_unit(quantity, p);
}

ParsedUnit parse_unit(std::string_view token)
{
        std::vector<std::string> parts = split(token, '/');
        ParsedUnit res;
        std::size_t next = 1;
        if (parts[0] == "deg" || parts[0] == "rad")
        {
                res.base = parts[0];
        }
        else if (parts[0] == "m" && parts.size() >= 2 && parts[1] == "s")
        {
                res.base = "m/s";
                next = 2;
        }
        else
        {
                throw ParseError("unknown unit token '" + std::string(token) + "'; supported tokens: "
                                 + std::string(SUPPORTED));
        }

        for (; next < parts.size(); ++next)
        {
                std::string unit = parts[next];
                double power = 1;
                if (unit.rfind("sqrt(", 0) == 0 && unit.size() > 6 && unit.back() == ')')
                {
                        unit = unit.substr(5, unit.size() - 6);
                        power = 0.5;
                }
                else if (unit.rfind("√", 0) == 0)
                {
                        unit = unit.substr(std::string("√").size());
                        power = 0.5;
                }
                const double seconds = seconds_in(unit, token);
                res.time_exponent += power;
                res.factor /= std::pow(seconds, power);
        }
        return res;
}

double convert_units(double value, Process p, Direction direction, const UnitSpec& spec)
{
        if (!(spec.sample_rate_hz > 0))
        {
                throw DomainError("sample rate must be positive");
        }
        const std::string token = spec.token(p);
        const ParsedUnit unit = parse_unit(token);
        if (unit.time_exponent != expected_time_exponent(p))
        {
                throw ParseError("unit '" + token + "' does not fit a " + std::string(process_name(p))
                                 + " parameter (time exponent " + std::to_string(expected_time_exponent(p)) + ")");
        }

        const double fs = spec.sample_rate_hz;
        double per_sample_scale = 1;
        switch (p)
        {
        case Process::QN:
                per_sample_scale = fs;
                break;
        case Process::WN:
                per_sample_scale = std::sqrt(fs);
                break;
        case Process::BI:
                per_sample_scale = 1;
                break;
        case Process::RW:
                per_sample_scale = 1 / std::sqrt(fs);
                break;
        case Process::DR:
                per_sample_scale = 1 / fs;
                break;
        }
        const double scale = unit.factor * per_sample_scale;
        return direction == Direction::ToSample ? value * scale : value / scale;
}

CompositeModel physical_to_model(const std::map<Process, double>& amplitudes, const UnitSpec& spec)
{
        CompositeModel m;
        for (const auto& [p, v] : amplitudes)
        {
                const double a = convert_units(v, p, Direction::ToSample, spec);
                m.set(p, is_amplitude_parameter(p) ? a : a * a);
        }
        return m;
}

double parameter_to_physical(Process p, double value, const UnitSpec& spec)
{
        const double amplitude = is_amplitude_parameter(p) ? value : std::sqrt(value);
        return convert_units(amplitude, p, Direction::ToPhysical, spec);
}

std::map<Process, double> model_to_physical(const CompositeModel& model, const UnitSpec& spec)
{
        std::map<Process, double> res;
        for (Process p : model.active_processes())
        {
                res[p] = parameter_to_physical(p, model.get(p), spec);
        }
        return res;
}
}
