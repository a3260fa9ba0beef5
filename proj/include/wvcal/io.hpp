#pragma once

#include <wvcal/fit.hpp>
#include <wvcal/wv.hpp>

#include <iosfwd>
#include <optional>
#include <string>

namespace wvcal
{
// 17 significant digits, the format of every floating value in CSV output.
std::string format_double(double v);

// Reads a single-column CSV ("value" header optional). The sample rate is
// taken from `sample_rate_hz`, else from a sidecar JSON {"sample_rate_hz": ...}
// at <path>.json or <path without extension>.json.
Signal ingest_signal(const std::string& path, std::optional<double> sample_rate_hz);
Signal parse_signal_csv(std::istream& in, const std::string& source);

void write_signal_csv(std::ostream& out, const Signal& signal);
void write_signal_csv(const std::string& path, const Signal& signal);

// Columns: level, half_window_samples, tau_seconds, nu_hat, n_coeff, ci_lo, ci_hi.
void write_wv_csv(std::ostream& out, const WvEstimate& est);
void write_wv_csv(const std::string& path, const WvEstimate& est);
WvEstimate read_wv_csv(const std::string& path, VarianceConvention convention);
WvEstimate parse_wv_csv(std::istream& in, const std::string& source, VarianceConvention convention);

// Fit report: method, theta_hat, std_errors, objective, converged,
// iterations, scales, units.
std::string fit_report_json(const FitResult& fit, const WvEstimate& est);

// Log-log plot data: level, tau_seconds, nu_hat, ci_lo, ci_hi, fitted.
void write_plot_csv(std::ostream& out, const WvEstimate& est, const FitResult& fit);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
}
