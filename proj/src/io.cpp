#include <wvcal/error.hpp>
#include <wvcal/io.hpp>

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace wvcal
{
namespace
{
std::string trim(const std::string& s)
{
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos)
        {
                return {};
        }
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& s)
{
        const std::string t = trim(s);
        if (t.empty())
        {
                return std::nullopt;
        }
        double v = 0;
        const char* first = t.data();
        if (*first == '+')
        {
                ++first;
        }
        const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size())
        {
                return std::nullopt;
        }
        return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
        std::vector<std::string> res;
        std::string cur;
        for (char c : line)
        {
                if (c == ',')
                {
                        res.push_back(trim(cur));
                        cur.clear();
                }
                else
                {
                        cur.push_back(c);
                }
        }
        res.push_back(trim(cur));
        return res;
}

std::ofstream open_out(const std::string& path)
{
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
                throw IoError("cannot write '" + path + "'");
        }
        return out;
}

std::ifstream open_in(const std::string& path)
{
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
                throw IoError("cannot open '" + path + "'");
        }
        return in;
}

std::optional<double> sidecar_rate(const std::string& path)
{
        const std::filesystem::path p(path);
        std::filesystem::path alt = p;
        alt.replace_extension(".json");
        for (const std::filesystem::path& candidate : {std::filesystem::path(path + ".json"), alt})
        {
                if (candidate == p || !std::filesystem::exists(candidate))
                {
                        continue;
                }
                try
                {
                        const nlohmann::json j = nlohmann::json::parse(read_text_file(candidate.string()));
                        if (j.contains("sample_rate_hz"))
                        {
                                return j.at("sample_rate_hz").get<double>();
                        }
                }
                catch (const nlohmann::json::exception& e)
                {
                        throw IoError("sidecar '" + candidate.string() + "' is not valid: " + e.what());
                }
        }
        return std::nullopt;
}
}

std::string format_double(double v)
{
        if (std::isnan(v))
        {
                return "nan";
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
}

void write_text_file(const std::string& path, const std::string& text)
{
        std::ofstream out = open_out(path);
        out << text;
        if (!out)
        {
                throw IoError("failed writing '" + path + "'");
        }
}

std::string read_text_file(const std::string& path)
{
        std::ifstream in = open_in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
}

//
// Signal CSV
//

Signal parse_signal_csv(std::istream& in, const std::string& source)
{
        Signal s;
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line))
        {
                ++number;
                const std::string t = trim(line);
                if (t.empty())
                {
                        continue;
                }
                const std::optional<double> v = parse_number(t);
                if (!v)
                {
                        if (number == 1 && t == "value")
                        {
                                continue;
                        }
                        throw IoError(source + ":" + std::to_string(number) + ": malformed value '" + t + "'");
                }
                if (!std::isfinite(*v))
                {
                        throw IoError(source + ":" + std::to_string(number) + ": value is not finite");
                }
                s.values.push_back(*v);
        }
        if (s.values.empty())
        {
                throw IoError(source + ": no samples");
        }
        return s;
}

Signal ingest_signal(const std::string& path, std::optional<double> sample_rate_hz)
{
        std::ifstream in = open_in(path);
        Signal s = parse_signal_csv(in, path);
        if (!sample_rate_hz)
        {
                sample_rate_hz = sidecar_rate(path);
        }
        if (!sample_rate_hz)
        {
                throw IoError(path + ": no sample rate; pass --fs or provide a sidecar JSON with sample_rate_hz");
        }
        if (!(*sample_rate_hz > 0))
        {
                throw DomainError("sample rate must be positive");
        }
        s.sample_rate_hz = *sample_rate_hz;
        return s;
}

void write_signal_csv(std::ostream& out, const Signal& signal)
{
        out << "value\n";
        for (double v : signal.values)
        {
                out << format_double(v) << '\n';
        }
}

void write_signal_csv(const std::string& path, const Signal& signal)
{
        std::ofstream out = open_out(path);
        write_signal_csv(out, signal);
}

//
// WV CSV
//

void write_wv_csv(std::ostream& out, const WvEstimate& est)
{
        out << "level,half_window_samples,tau_seconds,nu_hat,n_coeff,ci_lo,ci_hi\n";
        for (std::size_t k = 0; k < est.grid.size(); ++k)
        {
                const int j = est.grid.level(k);
                out << j << ',' << ScaleGrid::half_window(j) << ',' << format_double(est.tau_seconds(k)) << ','
                    << format_double(est.nu_hat[static_cast<Eigen::Index>(k)]) << ',' << est.coeff_counts[k] << ',';
                if (est.ci_lo)
                {
                        out << format_double((*est.ci_lo)[static_cast<Eigen::Index>(k)]);
                }
                out << ',';
                if (est.ci_hi)
                {
                        out << format_double((*est.ci_hi)[static_cast<Eigen::Index>(k)]);
                }
                out << '\n';
        }
}

void write_wv_csv(const std::string& path, const WvEstimate& est)
{
        std::ofstream out = open_out(path);
        write_wv_csv(out, est);
}

WvEstimate parse_wv_csv(std::istream& in, const std::string& source, VarianceConvention convention)
{
        std::string line;
        std::size_t number = 0;
        std::vector<int> levels;
        std::vector<double> nu;
        std::vector<std::size_t> counts;
        std::vector<double> taus;
        while (std::getline(in, line))
        {
                ++number;
                if (trim(line).empty())
                {
                        continue;
                }
                const std::vector<std::string> f = split_csv(line);
                if (number == 1 && f[0] == "level")
                {
                        continue;
                }
                if (f.size() < 5)
                {
                        throw IoError(source + ":" + std::to_string(number) + ": expected at least 5 columns");
                }
                const std::optional<double> level = parse_number(f[0]);
                const std::optional<double> tau = parse_number(f[2]);
                const std::optional<double> value = parse_number(f[3]);
                const std::optional<double> count = parse_number(f[4]);
                if (!level || !tau || !value || !count || *level < 1 || *count < 1)
                {
                        throw IoError(source + ":" + std::to_string(number) + ": malformed row");
                }
                levels.push_back(static_cast<int>(*level));
                taus.push_back(*tau);
                nu.push_back(*value);
                counts.push_back(static_cast<std::size_t>(*count));
        }
        if (levels.empty())
        {
                throw IoError(source + ": no scales");
        }
        const std::size_t length = counts[0] + 2 * ScaleGrid::half_window(levels[0]) - 1;
        ScaleGrid grid(levels, length);
        for (std::size_t k = 0; k < levels.size(); ++k)
        {
                if (grid.coeff_count(k) != counts[k])
                {
                        throw IoError(source + ": coefficient counts are inconsistent with a single signal length");
                }
        }
        WvEstimate est{.grid = grid,
                       .nu_hat = Eigen::Map<Vector>(nu.data(), static_cast<Eigen::Index>(nu.size())),
                       .coeff_counts = counts,
                       .convention = convention,
                       .sample_rate_hz = static_cast<double>(ScaleGrid::half_window(levels[0])) / taus[0]};
        return est;
}

WvEstimate read_wv_csv(const std::string& path, VarianceConvention convention)
{
        std::ifstream in = open_in(path);
        return parse_wv_csv(in, path, convention);
}

//
// Fit report
//

std::string fit_report_json(const FitResult& fit, const WvEstimate& est)
{
        nlohmann::ordered_json j;
        j["method"] = {{"f", std::string(moment_name(fit.method.f))},
                       {"omega", std::string(weight_name(fit.method.omega))},
                       {"solver", std::string(solver_name(fit.method.solver))}};
        j["theta_hat"] = nlohmann::ordered_json::object();
        j["std_errors"] = nlohmann::ordered_json::object();
        for (std::size_t k = 0; k < fit.active.size(); ++k)
        {
                const std::string name(process_name(fit.active[k]));
                j["theta_hat"][name] = fit.theta_hat.get(fit.active[k]);
                const double se = k < static_cast<std::size_t>(fit.std_errors.size())
                                          ? fit.std_errors[static_cast<Eigen::Index>(k)]
                                          : std::numeric_limits<double>::quiet_NaN();
                j["std_errors"][name] = std::isfinite(se) ? nlohmann::ordered_json(se) : nlohmann::ordered_json();
        }
        j["objective"] = fit.objective;
        j["converged"] = fit.converged;
        j["iterations"] = fit.iterations;
        j["projected"] = fit.projected;
        if (!fit.failures.empty())
        {
                j["failures"] = nlohmann::ordered_json::object();
                for (const auto& [p, why] : fit.failures)
                {
                        j["failures"][std::string(process_name(p))] = why;
                }
        }
        j["scales"] = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < est.grid.size(); ++k)
        {
                const auto i = static_cast<Eigen::Index>(k);
                j["scales"].push_back({{"level", est.grid.level(k)},
                                       {"nu_hat", est.nu_hat[i]},
                                       {"fitted", i < fit.fitted_wv.size() ? fit.fitted_wv[i] : 0.0}});
        }
        j["units"] = "per-sample";
        return j.dump(2) + "\n";
}

void write_plot_csv(std::ostream& out, const WvEstimate& est, const FitResult& fit)
{
        out << "level,tau_seconds,nu_hat,ci_lo,ci_hi,fitted\n";
        for (std::size_t k = 0; k < est.grid.size(); ++k)
        {
                const auto i = static_cast<Eigen::Index>(k);
                out << est.grid.level(k) << ',' << format_double(est.tau_seconds(k)) << ','
                    << format_double(est.nu_hat[i]) << ',';
                if (est.ci_lo)
                {
                        out << format_double((*est.ci_lo)[i]);
                }
                out << ',';
                if (est.ci_hi)
                {
                        out << format_double((*est.ci_hi)[i]);
                }
                out << ',' << format_double(i < fit.fitted_wv.size() ? fit.fitted_wv[i] : 0.0) << '\n';
        }
}
}
