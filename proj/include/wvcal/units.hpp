#pragma once

#include <wvcal/model.hpp>

#include <map>
#include <string>
#include <string_view>

namespace wvcal
{
enum class Quantity
{
        GyroRate,
        Accel,
};

Quantity parse_quantity(std::string_view s);
std::string_view quantity_name(Quantity q);

enum class Direction
{
        ToSample,
        ToPhysical,
};

// Physical units of each process parameter. The signal is a rate (deg/s,
// rad/s or m/s^2); parameters are given as amplitudes Q, sigma (N), B,
// gamma (K) and omega (R).
struct UnitSpec
{
        Quantity quantity = Quantity::GyroRate;
        double sample_rate_hz = 1.0;
        // Per-process unit token; defaults come from default_unit().
        std::map<Process, std::string> tokens;

        [[nodiscard]] std::string token(Process p) const;
};

// Gyro: deg, deg/sqrt(hr), deg/hr, deg/hr/sqrt(hr), deg/hr/hr.
// Accel: m/s, m/s/sqrt(hr), m/s/hr, m/s/hr/sqrt(hr), m/s/hr/hr.
std::string default_unit(Quantity q, Process p);

// Parsed token: value [base / s^time_exponent] = factor * value [token].
struct ParsedUnit
{
        std::string base;
        double time_exponent = 0;
        double factor = 1;
};

// Grammar: base ("deg", "rad" or "m/s") followed by "/"-separated time
// denominators "s", "min", "hr" (alias "h"), or "sqrt(...)" / "√..." of them.
ParsedUnit parse_unit(std::string_view token);

// Converts a parameter amplitude between physical units and per-sample
// units of the rate signal:
//   QN  Q_s = Q fs      WN  sigma_s = N sqrt(fs)      BI  B_s = B
//   RW  gamma_s = K / sqrt(fs)                         DR  omega_s = R / fs
// after the token's time unit has been brought to seconds.
double convert_units(double value, Process p, Direction direction, const UnitSpec& spec);

// Amplitudes (physical) to a per-sample model (Q^2, sigma^2, B, gamma^2, omega) and back.
CompositeModel physical_to_model(const std::map<Process, double>& amplitudes, const UnitSpec& spec);
std::map<Process, double> model_to_physical(const CompositeModel& model, const UnitSpec& spec);

// Per-sample parameter value (as stored in CompositeModel) to physical amplitude.
double parameter_to_physical(Process p, double value, const UnitSpec& spec);
}
