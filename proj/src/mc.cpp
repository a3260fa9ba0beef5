#include <wvcal/error.hpp>
#include <wvcal/io.hpp>
#include <wvcal/mc.hpp>
#include <wvcal/parallel.hpp>
#include <wvcal/random.hpp>
#include <wvcal/simulate.hpp>

#include <boost/random/uniform_int_distribution.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace wvcal
{
namespace
{
std::uint64_t fnv1a(const Vector& v)
{
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (Eigen::Index i = 0; i < v.size(); ++i)
        {
                unsigned char bytes[sizeof(double)];
                const double x = v[i];
                std::memcpy(bytes, &x, sizeof(double));
                for (unsigned char b : bytes)
                {
                        h ^= b;
                        h *= 0x100000001b3ULL;
                }
        }
        return h;
}

double quantile(const std::vector<double>& sorted, double q)
{
        if (sorted.empty())
        {
                return std::numeric_limits<double>::quiet_NaN();
        }
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double rmse_of(const std::vector<double>& xs, double truth)
{
        if (xs.empty())
        {
                return std::numeric_limits<double>::quiet_NaN();
        }
        double s = 0;
        for (double x : xs)
        {
                s += (x - truth) * (x - truth);
        }
        return std::sqrt(s / static_cast<double>(xs.size()));
}
}

ScaleGrid GridPolicy::grid_for(std::size_t length) const
{
        if (levels)
        {
                return {*levels, length};
        }
        return ScaleGrid::with_min_coeffs(length, min_coeffs);
}

void validate(const Experiment& exp)
{
        if (exp.reps < 1)
        {
                throw DomainError("experiment needs at least one replication");
        }
        if (exp.methods.empty())
        {
                throw DomainError("experiment needs at least one method");
        }
        if (exp.truth.size() == 0)
        {
                throw DomainError("experiment truth has no active process");
        }
        if (exp.truth.active(Process::BI))
        {
                throw DomainError("experiment truth cannot contain bias instability (not simulatable)");
        }
        if (exp.length < 8)
        {
                throw DomainError("experiment signal length must be at least 8");
        }
        (void)exp.grid.grid_for(exp.length);
}

const ParameterSummary& McSummary::row(const std::string& method, Process p) const
{
        for (const ParameterSummary& r : rows)
        {
                if (r.method == method && r.process == p)
                {
                        return r;
                }
        }
        throw DomainError("no summary row for method " + method + " and parameter " + std::string(process_name(p)));
}

ParameterSummary summarize(const std::string& method, Process p, double truth, const std::vector<double>& estimates,
                           std::size_t failures)
{
        ParameterSummary s;
        s.method = method;
        s.process = p;
        s.truth = truth;
        s.count = estimates.size();
        s.failures = failures;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (estimates.empty())
        {
                s.mean = s.bias = s.sd = s.rmse = nan;
                s.quantiles.fill(nan);
                return s;
        }
        const auto n = static_cast<double>(estimates.size());
        double sum = 0;
        for (double x : estimates)
        {
                sum += x;
        }
        s.mean = sum / n;
        s.bias = s.mean - truth;
        double ss = 0;
        for (double x : estimates)
        {
                ss += (x - s.mean) * (x - s.mean);
        }
        s.sd = estimates.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        s.rmse = rmse_of(estimates, truth);
        std::vector<double> sorted = estimates;
        std::sort(sorted.begin(), sorted.end());
        const std::array<double, 5> qs = {0.05, 0.25, 0.5, 0.75, 0.95};
        for (std::size_t i = 0; i < qs.size(); ++i)
        {
                s.quantiles[i] = quantile(sorted, qs[i]);
        }
        return s;
}

McSummary run_experiment(const Experiment& exp)
{
        validate(exp);

        const std::vector<Process> params = exp.truth.active_processes();
        const ScaleGrid grid = exp.grid.grid_for(exp.length);
        const std::size_t methods = exp.methods.size();

        EstimateOptions options;
        options.compute_covariance = false;

        std::vector<ReplicationRecord> records(exp.reps * methods);
        parallel_for(exp.reps, exp.workers,
                     [&](std::size_t r)
                     {
                             const std::uint64_t rep_seed = derive_seed(exp.seed, {r});
                             const WvEstimate est = [&]
                             {
                                     if (exp.noiseless)
                                     {
                                             return WvEstimate{.grid = grid,
                                                               .nu_hat = model_wv(exp.truth, exp.convention, grid),
                                                               .coeff_counts = grid.coeff_counts(),
                                                               .convention = exp.convention,
                                                               .sample_rate_hz = exp.sample_rate_hz};
                                     }
                                     const Signal s = simulate({exp.truth, exp.length, rep_seed, exp.sample_rate_hz});
                                     WvEstimate e = empirical_wv(s, grid, exp.convention);
                                     const bool bootstrap =
                                             exp.cov == CovPolicy::Bootstrap
                                             || (exp.cov == CovPolicy::Auto
                                                 && default_cov_method(s, grid) == CovMethod::BlockBootstrap);
                                     if (bootstrap)
                                     {
                                             BootstrapOptions bo;
                                             bo.seed = derive_seed(rep_seed, {0xb0});
                                             e.cov_hat = wv_covariance(s, grid, exp.convention,
                                                                       CovMethod::BlockBootstrap, bo);
                                     }
                                     return e;
                             }();
                             const std::uint64_t hash = fnv1a(est.nu_hat);

                             for (std::size_t m = 0; m < methods; ++m)
                             {
                                     ReplicationRecord& rec = records[r * methods + m];
                                     rec.replication = r;
                                     rec.method = exp.methods[m].label;
                                     rec.input_hash = hash;
                                     for (Process p : params)
                                     {
                                             rec.estimates[p] = std::nullopt;
                                     }
                                     try
                                     {
                                             const FitResult fit =
                                                     estimate(exp.methods[m].descriptor, est, params, options);
                                             rec.converged = fit.converged;
                                             const bool per_process = exp.methods[m].descriptor.solver
                                                                      == SolverKind::Avsm;
                                             if (!fit.converged && !per_process)
                                             {
                                                     rec.error = "not converged";
                                                     continue;
                                             }
                                             for (Process p : fit.active)
                                             {
                                                     rec.estimates[p] = fit.theta_hat.get(p);
                                             }
                                             if (!fit.failures.empty())
                                             {
                                                     rec.error = fit.failures.begin()->second;
                                             }
                                     }
                                     catch (const Error& e)
                                     {
                                             rec.converged = false;
                                             rec.error = e.what();
                                     }
                             }
                     });

        McSummary summary;
        summary.raw = std::move(records);
        summary.parameters = params;
        summary.reps = exp.reps;
        for (const MethodSpec& m : exp.methods)
        {
                summary.methods.push_back(m.label);
        }

        for (std::size_t m = 0; m < methods; ++m)
        {
                const std::string& label = exp.methods[m].label;
                bool any = false;
                std::string first_error;
                for (Process p : params)
                {
                        std::vector<double> xs;
                        std::size_t failures = 0;
                        for (std::size_t r = 0; r < exp.reps; ++r)
                        {
                                const ReplicationRecord& rec = summary.raw[r * methods + m];
                                const std::optional<double>& v = rec.estimates.at(p);
                                if (v)
                                {
                                        xs.push_back(*v);
                                }
                                else
                                {
                                        ++failures;
                                        if (first_error.empty())
                                        {
                                                first_error = rec.error;
                                        }
                                }
                        }
                        any = any || !xs.empty();
                        summary.rows.push_back(summarize(label, p, exp.truth.get(p), xs, failures));
                }
                if (!any)
                {
                        summary.method_errors[label] = first_error.empty() ? "all replications failed" : first_error;
                }
        }
        return summary;
}

std::vector<Ranking> compare_methods(const McSummary& summary)
{
        std::vector<Ranking> res;
        for (Process p : summary.parameters)
        {
                Ranking ranking{p, {}};
                for (const std::string& m : summary.methods)
                {
                        ranking.entries.push_back({m, summary.row(m, p).rmse, 0});
                }
                // NaN (all failed) sorts last; stable keeps the input order among equals.
                std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                                 [](const RankEntry& a, const RankEntry& b)
                                 {
                                         if (std::isnan(a.rmse) || std::isnan(b.rmse))
                                         {
                                                 return !std::isnan(a.rmse) && std::isnan(b.rmse);
                                         }
                                         return a.rmse < b.rmse;
                                 });
                for (std::size_t i = 0; i < ranking.entries.size(); ++i)
                {
                        RankEntry& e = ranking.entries[i];
                        if (i > 0)
                        {
                                const RankEntry& prev = ranking.entries[i - 1];
                                const double scale = std::max(std::abs(prev.rmse), std::abs(e.rmse));
                                const bool tie = (std::isnan(prev.rmse) && std::isnan(e.rmse))
                                                 || std::abs(prev.rmse - e.rmse) <= 1e-12 * scale;
                                if (tie)
                                {
                                        e.rank = prev.rank;
                                        continue;
                                }
                        }
                        e.rank = i + 1;
                }
                res.push_back(std::move(ranking));
        }
        return res;
}

double rank_confidence(const McSummary& summary, const std::string& a, const std::string& b, Process p,
                       std::size_t resamples, std::uint64_t seed)
{
        const std::size_t methods = summary.methods.size();
        const auto index = [&](const std::string& label)
        {
                const auto it = std::find(summary.methods.begin(), summary.methods.end(), label);
                if (it == summary.methods.end())
                {
                        throw DomainError("unknown method " + label);
                }
                return static_cast<std::size_t>(it - summary.methods.begin());
        };
        const std::size_t ia = index(a);
        const std::size_t ib = index(b);
        const double truth = summary.row(a, p).truth;
        const std::size_t reps = summary.reps;
        if (summary.raw.size() != reps * methods)
        {
                throw DomainError("rank confidence needs the raw replication records");
        }

        Engine engine(derive_seed(seed, {0xc0f}));
        boost::random::uniform_int_distribution<std::size_t> pick(0, reps - 1);
        std::size_t wins = 0;
        for (std::size_t s = 0; s < resamples; ++s)
        {
                double sa = 0;
                double sb = 0;
                std::size_t na = 0;
                std::size_t nb = 0;
                for (std::size_t i = 0; i < reps; ++i)
                {
                        const std::size_t r = pick(engine);
                        if (const auto& v = summary.raw[r * methods + ia].estimates.at(p))
                        {
                                sa += (*v - truth) * (*v - truth);
                                ++na;
                        }
                        if (const auto& v = summary.raw[r * methods + ib].estimates.at(p))
                        {
                                sb += (*v - truth) * (*v - truth);
                                ++nb;
                        }
                }
                // A method with no successful estimate in the resample loses.
                if (na > 0 && (nb == 0 || sa / static_cast<double>(na) <= sb / static_cast<double>(nb)))
                {
                        ++wins;
                }
        }
        return static_cast<double>(wins) / static_cast<double>(resamples);
}

void emit_figure_data(const McSummary& summary, const std::string& dir)
{
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
        {
                throw IoError("cannot create output directory '" + dir + "': " + ec.message());
        }
        const std::filesystem::path base(dir);

        std::ostringstream box;
        box << "method,parameter,replication,estimate\n";
        for (const ReplicationRecord& rec : summary.raw)
        {
                for (Process p : summary.parameters)
                {
                        const std::optional<double>& v = rec.estimates.at(p);
                        box << rec.method << ',' << process_name(p) << ',' << rec.replication << ','
                            << (v ? format_double(*v) : std::string("nan")) << '\n';
                }
        }
        write_text_file((base / "boxplot.csv").string(), box.str());

        std::ostringstream rmse;
        rmse << "method,parameter,bias,sd,rmse,failures\n";
        for (const ParameterSummary& r : summary.rows)
        {
                rmse << r.method << ',' << process_name(r.process) << ',' << format_double(r.bias) << ','
                     << format_double(r.sd) << ',' << format_double(r.rmse) << ',' << r.failures << '\n';
        }
        write_text_file((base / "rmse.csv").string(), rmse.str());
}

std::vector<RmseRow> read_rmse_csv(const std::string& path)
{
        std::istringstream in(read_text_file(path));
        std::string line;
        std::vector<RmseRow> rows;
        std::size_t number = 0;
        while (std::getline(in, line))
        {
                ++number;
                if (number == 1 || line.empty())
                {
                        continue;
                }
                std::vector<std::string> f;
                std::stringstream ls(line);
                std::string cell;
                while (std::getline(ls, cell, ','))
                {
                        f.push_back(cell);
                }
                if (f.size() != 6)
                {
                        throw IoError(path + ":" + std::to_string(number) + ": expected 6 columns");
                }
                RmseRow r;
                r.method = f[0];
                r.parameter = f[1];
                r.bias = std::strtod(f[2].c_str(), nullptr);
                r.sd = std::strtod(f[3].c_str(), nullptr);
                r.rmse = std::strtod(f[4].c_str(), nullptr);
                r.failures = std::stoul(f[5]);
                rows.push_back(r);
        }
        return rows;
}

std::string summary_json(const McSummary& summary)
{
        nlohmann::ordered_json j;
        j["reps"] = summary.reps;
        j["methods"] = summary.methods;
        j["rows"] = nlohmann::ordered_json::array();
        auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
        for (const ParameterSummary& r : summary.rows)
        {
                nlohmann::ordered_json q = nlohmann::ordered_json::array();
                for (double v : r.quantiles)
                {
                        q.push_back(num(v));
                }
                j["rows"].push_back({{"method", r.method},
                                     {"parameter", std::string(process_name(r.process))},
                                     {"name", std::string(parameter_name(r.process))},
                                     {"truth", r.truth},
                                     {"mean", num(r.mean)},
                                     {"bias", num(r.bias)},
                                     {"sd", num(r.sd)},
                                     {"rmse", num(r.rmse)},
                                     {"quantiles", q},
                                     {"count", r.count},
                                     {"failures", r.failures}});
        }
        j["method_errors"] = nlohmann::ordered_json::object();
        for (const auto& [m, e] : summary.method_errors)
        {
                j["method_errors"][m] = e;
        }
        j["ranking"] = nlohmann::ordered_json::array();
        for (const Ranking& rk : compare_methods(summary))
        {
                nlohmann::ordered_json entries = nlohmann::ordered_json::array();
                for (const RankEntry& e : rk.entries)
                {
                        entries.push_back({{"method", e.method}, {"rmse", num(e.rmse)}, {"rank", e.rank}});
                }
                j["ranking"].push_back({{"parameter", std::string(process_name(rk.process))}, {"entries", entries}});
        }
        j["units"] = "per-sample";
        return j.dump(2) + "\n";
}

Experiment parse_experiment(const std::string& json_text)
{
        nlohmann::json j;
        try
        {
                j = nlohmann::json::parse(json_text);
        }
        catch (const nlohmann::json::exception& e)
        {
                throw ParseError(std::string("experiment specification is not valid JSON: ") + e.what());
        }

        Experiment exp;
        try
        {
                exp.sample_rate_hz = j.value("sample_rate_hz", 250.0);
                exp.length = j.value("T", exp.length);
                exp.reps = j.value("reps", exp.reps);
                exp.seed = j.value("seed", exp.seed);
                exp.noiseless = j.value("noiseless", false);
                if (j.contains("convention"))
                {
                        exp.convention = parse_convention(j.at("convention").get<std::string>());
                }
                if (j.contains("cov"))
                {
                        const std::string c = j.at("cov").get<std::string>();
                        if (c == "auto")
                        {
                                exp.cov = CovPolicy::Auto;
                        }
                        else if (c == "diag")
                        {
                                exp.cov = CovPolicy::Diagonal;
                        }
                        else if (c == "bootstrap")
                        {
                                exp.cov = CovPolicy::Bootstrap;
                        }
                        else
                        {
                                throw ParseError("unknown cov policy '" + c + "' (expected auto, diag or bootstrap)");
                        }
                }

                const nlohmann::json& truth = j.at("truth");
                if (truth.contains("physical"))
                {
                        UnitSpec units;
                        units.quantity = parse_quantity(truth.value("quantity", std::string("gyro_rate")));
                        units.sample_rate_hz = exp.sample_rate_hz;
                        std::map<Process, double> amplitudes;
                        for (const auto& [name, value] : truth.at("physical").items())
                        {
                                const Process p = parse_process(name);
                                if (value.is_object())
                                {
                                        amplitudes[p] = value.at("value").get<double>();
                                        if (value.contains("unit"))
                                        {
                                                units.tokens[p] = value.at("unit").get<std::string>();
                                        }
                                }
                                else
                                {
                                        amplitudes[p] = value.get<double>();
                                }
                        }
                        exp.truth = physical_to_model(amplitudes, units);
                        exp.units = units;
                }
                else
                {
                        exp.truth = parse_model_spec(truth.dump()).model;
                }

                if (j.contains("grid"))
                {
                        const nlohmann::json& g = j.at("grid");
                        if (g.contains("levels"))
                        {
                                exp.grid.levels = g.at("levels").get<std::vector<int>>();
                        }
                        exp.grid.min_coeffs = g.value("min_coeffs", exp.grid.min_coeffs);
                }

                const nlohmann::json methods =
                        j.contains("methods") ? j.at("methods") : nlohmann::json::array({"gmwm", "armav", "avsm"});
                for (const nlohmann::json& m : methods)
                {
                        if (m.is_string())
                        {
                                const std::string name = m.get<std::string>();
                                exp.methods.push_back({name, named_method(name)});
                        }
                        else
                        {
                                MethodDescriptor d;
                                d.f = parse_moment(m.value("f", std::string("identity")));
                                d.omega = parse_weight(m.value("omega", std::string("diag_inverse_squared")));
                                d.solver = parse_solver(m.value("solver", std::string("closed_form")));
                                const std::string label =
                                        m.value("label", std::string(moment_name(d.f)) + "/" + std::string(weight_name(d.omega))
                                                                 + "/" + std::string(solver_name(d.solver)));
                                exp.methods.push_back({label, d});
                        }
                }
        }
        catch (const nlohmann::json::exception& e)
        {
                throw ParseError(std::string("invalid experiment specification: ") + e.what());
        }
        exp.workers = default_worker_count();
        validate(exp);
        return exp;
}
}
