#include <wvcal/cli.hpp>
#include <wvcal/error.hpp>
#include <wvcal/fit.hpp>
#include <wvcal/io.hpp>
#include <wvcal/mc.hpp>
#include <wvcal/parallel.hpp>
#include <wvcal/simulate.hpp>
#include <wvcal/units.hpp>
#include <wvcal/wv.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace wvcal
{
namespace
{
// A model file is either per-sample {"processes": ...} or physical
// {"physical": {"WN": {"value": 0.157, "unit": "deg/sqrt(hr)"}}, "quantity": ...}.
ModelSpec load_model(const std::string& path, double sample_rate_hz)
{
        const std::string text = read_text_file(path);
        nlohmann::json j;
        try
        {
                j = nlohmann::json::parse(text);
        }
        catch (const nlohmann::json::exception& e)
        {
                throw ParseError(path + ": not valid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("physical"))
        {
                return parse_model_spec(text);
        }
        try
        {
                UnitSpec units;
                units.quantity = parse_quantity(j.value("quantity", std::string("gyro_rate")));
                units.sample_rate_hz = sample_rate_hz;
                std::map<Process, double> amplitudes;
                for (const auto& [name, value] : j.at("physical").items())
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
                ModelSpec spec;
                spec.model = physical_to_model(amplitudes, units);
                spec.active = spec.model.active_processes();
                if (j.contains("convention"))
                {
                        spec.convention = parse_convention(j.at("convention").get<std::string>());
                }
                return spec;
        }
        catch (const nlohmann::json::exception& e)
        {
                throw ParseError(path + ": invalid physical model: " + e.what());
        }
}

// Without explicit levels: every level the block bootstrap can cover when a
// bootstrap covariance may be requested, otherwise every level with enough
// coefficients.
ScaleGrid make_grid(const std::vector<int>& levels, std::optional<std::size_t> min_coeffs, const std::string& cov,
                    std::size_t length)
{
        if (!levels.empty())
        {
                return {levels, length};
        }
        if (!min_coeffs && (cov == "auto" || cov == "bootstrap") && length >= 128)
        {
                int top = 0;
                while ((std::size_t{64} << (top + 1)) <= length)
                {
                        ++top;
                }
                return ScaleGrid::first_levels(top, length);
        }
        return ScaleGrid::with_min_coeffs(length, min_coeffs.value_or(16));
}

std::optional<Matrix> covariance_for(const Signal& signal, const ScaleGrid& grid, VarianceConvention convention,
                                     const std::string& mode, std::size_t resamples, std::uint64_t seed)
{
        if (mode == "none")
        {
                return std::nullopt;
        }
        CovMethod method = CovMethod::DiagonalLargeSample;
        if (mode == "bootstrap")
        {
                method = CovMethod::BlockBootstrap;
        }
        else if (mode == "auto")
        {
                method = default_cov_method(signal, grid);
        }
        BootstrapOptions options;
        options.resamples = resamples;
        options.seed = seed;
        options.workers = default_worker_count();
        return wv_covariance(signal, grid, convention, method, options);
}

void write_sidecar(const std::string& csv_path, double sample_rate_hz)
{
        nlohmann::ordered_json j;
        j["sample_rate_hz"] = sample_rate_hz;
        write_text_file(csv_path + ".json", j.dump() + "\n");
}

struct SimulateArgs
{
        std::string model;
        std::size_t length = 0;
        std::uint64_t seed = 0;
        double fs = 1.0;
        std::string out;
        std::string components;
};

int run_simulate(const SimulateArgs& a)
{
        const ModelSpec spec = load_model(a.model, a.fs);
        const SimConfig config{spec.model, a.length, a.seed, a.fs};
        const Signal signal = simulate(config);
        write_signal_csv(a.out, signal);
        write_sidecar(a.out, a.fs);
        if (!a.components.empty())
        {
                std::filesystem::create_directories(a.components);
                for (const auto& [p, s] : simulate_components(config))
                {
                        const std::string path =
                                (std::filesystem::path(a.components) / (std::string(process_name(p)) + ".csv")).string();
                        write_signal_csv(path, s);
                        write_sidecar(path, a.fs);
                }
        }
        return 0;
}

struct WvArgs
{
        std::string in;
        std::optional<double> fs;
        std::string convention = "av";
        std::string cov = "auto";
        double ci = 0.95;
        std::vector<int> levels;
        std::optional<std::size_t> min_coeffs;
        std::size_t resamples = 200;
        std::uint64_t seed = 0;
        std::string out;
};

int run_wv(const WvArgs& a)
{
        const Signal signal = ingest_signal(a.in, a.fs);
        const VarianceConvention conv = parse_convention(a.convention);
        const ScaleGrid grid = make_grid(a.levels, a.min_coeffs, a.cov, signal.size());
        WvEstimate est = empirical_wv(signal, grid, conv);
        est.cov_hat = covariance_for(signal, grid, conv, a.cov, a.resamples, a.seed);
        if (est.cov_hat)
        {
                est = wv_confidence(est, a.ci);
        }
        write_wv_csv(a.out, est);
        return 0;
}

struct FitArgs
{
        std::string in;
        std::string wv;
        std::string model_template;
        std::string method = "gmwm";
        std::optional<double> fs;
        std::optional<std::string> convention;
        std::string cov = "auto";
        std::vector<int> levels;
        std::optional<std::size_t> min_coeffs;
        std::size_t resamples = 200;
        std::uint64_t seed = 0;
        std::string out;
        std::string plot;
};

int run_fit(const FitArgs& a)
{
        if (a.in.empty() == a.wv.empty())
        {
                throw DomainError("fit needs exactly one of --in or --wv");
        }
        const ModelSpec spec = load_model(a.model_template, a.fs.value_or(1.0));
        if (spec.active.empty())
        {
                throw DomainError("model template has no process");
        }
        const VarianceConvention conv = a.convention ? parse_convention(*a.convention) : spec.convention;

        const WvEstimate est = [&]
        {
                if (!a.wv.empty())
                {
                        WvEstimate e = read_wv_csv(a.wv, conv);
                        if (a.fs)
                        {
                                e.sample_rate_hz = *a.fs;
                        }
                        return e;
                }
                const Signal signal = ingest_signal(a.in, a.fs);
                const ScaleGrid grid = make_grid(a.levels, a.min_coeffs, a.cov, signal.size());
                WvEstimate e = empirical_wv(signal, grid, conv);
                e.cov_hat = covariance_for(signal, grid, conv, a.cov, a.resamples, a.seed);
                return e;
        }();

        const FitResult fit = estimate(named_method(a.method), est, spec.active);
        write_text_file(a.out, fit_report_json(fit, est));
        if (!a.plot.empty())
        {
                std::ofstream plot(a.plot);
                if (!plot)
                {
                        throw IoError("cannot write '" + a.plot + "'");
                }
                write_plot_csv(plot, est, fit);
        }
        if (!fit.converged)
        {
                std::cerr << "wvcal: fit did not converge after " << fit.iterations << " iterations\n";
                return static_cast<int>(ErrorClass::NonConvergence);
        }
        return 0;
}

struct McArgs
{
        std::string spec;
        std::string out;
        std::optional<std::size_t> reps;
};

int run_mc(const McArgs& a)
{
        Experiment exp = parse_experiment(read_text_file(a.spec));
        if (a.reps)
        {
                exp.reps = *a.reps;
                validate(exp);
        }
        const McSummary summary = run_experiment(exp);
        emit_figure_data(summary, a.out);
        write_text_file((std::filesystem::path(a.out) / "summary.json").string(), summary_json(summary));
        for (const auto& [method, error] : summary.method_errors)
        {
                std::cerr << "wvcal: method " << method << " failed in every replication: " << error << "\n";
        }
        return 0;
}

struct ConvertArgs
{
        std::string quantity = "gyro_rate";
        std::string param;
        double value = 0;
        std::string unit;
        double fs = 1.0;
        std::string direction = "to-sample";
};

int run_convert(const ConvertArgs& a)
{
        if (!(a.fs > 0))
        {
                throw DomainError("--fs must be positive");
        }
        UnitSpec spec;
        spec.quantity = parse_quantity(a.quantity);
        spec.sample_rate_hz = a.fs;
        const Process p = parse_process(a.param);
        if (!a.unit.empty())
        {
                spec.tokens[p] = a.unit;
        }
        Direction d = Direction::ToSample;
        if (a.direction == "to-physical")
        {
                d = Direction::ToPhysical;
        }
        else if (a.direction != "to-sample")
        {
                throw DomainError("--direction must be to-sample or to-physical");
        }
        std::cout << format_double(convert_units(a.value, p, d, spec)) << "\n";
        return 0;
}

void add_grid_options(CLI::App* cmd, std::vector<int>& levels, std::optional<std::size_t>& min_coeffs)
{
        cmd->add_option("--levels", levels, "Dyadic levels j (half-window 2^j samples)")->delimiter(',');
        cmd->add_option("--min-coeffs", min_coeffs, "Keep every level with at least this many coefficients");
}
}

int run_cli(int argc, const char* const* argv)
{
        CLI::App app{"Stochastic error model calibration for inertial sensors"};
        app.name("wvcal");
        app.require_subcommand(1);

        SimulateArgs sim;
        CLI::App* sim_cmd = app.add_subcommand("simulate", "Simulate a composite error signal");
        sim_cmd->add_option("--model", sim.model, "Model JSON")->required();
        sim_cmd->add_option("--T", sim.length, "Number of samples")->required()->check(CLI::PositiveNumber);
        sim_cmd->add_option("--seed", sim.seed, "Master seed");
        sim_cmd->add_option("--fs", sim.fs, "Sample rate in Hz")->check(CLI::PositiveNumber);
        sim_cmd->add_option("--out", sim.out, "Signal CSV")->required();
        sim_cmd->add_option("--components", sim.components, "Directory for one CSV per process");

        WvArgs wv;
        CLI::App* wv_cmd = app.add_subcommand("wv", "Empirical Allan / wavelet variance");
        wv_cmd->add_option("--in", wv.in, "Signal CSV")->required();
        wv_cmd->add_option("--fs", wv.fs, "Sample rate in Hz")->check(CLI::PositiveNumber);
        wv_cmd->add_option("--convention", wv.convention)->check(CLI::IsMember({"av", "wv"}));
        wv_cmd->add_option("--cov", wv.cov)->check(CLI::IsMember({"auto", "bootstrap", "diag", "none"}));
        wv_cmd->add_option("--ci", wv.ci, "Confidence level");
        add_grid_options(wv_cmd, wv.levels, wv.min_coeffs);
        wv_cmd->add_option("--resamples", wv.resamples)->check(CLI::PositiveNumber);
        wv_cmd->add_option("--seed", wv.seed, "Bootstrap seed");
        wv_cmd->add_option("--out", wv.out, "WV CSV")->required();

        FitArgs fit;
        CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a composite model");
        fit_cmd->add_option("--in", fit.in, "Signal CSV");
        fit_cmd->add_option("--wv", fit.wv, "WV CSV");
        fit_cmd->add_option("--model-template", fit.model_template, "Model JSON naming the processes")->required();
        fit_cmd->add_option("--method", fit.method)->check(CLI::IsMember({"gmwm", "armav", "avsm"}));
        fit_cmd->add_option("--fs", fit.fs, "Sample rate in Hz")->check(CLI::PositiveNumber);
        fit_cmd->add_option("--convention", fit.convention)->check(CLI::IsMember({"av", "wv"}));
        fit_cmd->add_option("--cov", fit.cov)->check(CLI::IsMember({"auto", "bootstrap", "diag", "none"}));
        add_grid_options(fit_cmd, fit.levels, fit.min_coeffs);
        fit_cmd->add_option("--resamples", fit.resamples)->check(CLI::PositiveNumber);
        fit_cmd->add_option("--seed", fit.seed, "Bootstrap seed");
        fit_cmd->add_option("--out", fit.out, "Fit report JSON")->required();
        fit_cmd->add_option("--plot", fit.plot, "Plot data CSV");

        McArgs mc;
        CLI::App* mc_cmd = app.add_subcommand("mc", "Monte Carlo comparison of estimators");
        mc_cmd->add_option("--spec", mc.spec, "Experiment JSON")->required();
        mc_cmd->add_option("--out", mc.out, "Output directory")->required();
        mc_cmd->add_option("--reps", mc.reps, "Override the replication count")->check(CLI::PositiveNumber);

        ConvertArgs conv;
        CLI::App* conv_cmd = app.add_subcommand("convert-units", "Convert a parameter amplitude");
        conv_cmd->add_option("--quantity", conv.quantity)->check(CLI::IsMember({"gyro_rate", "gyro", "accel"}));
        conv_cmd->add_option("--param", conv.param, "QN, WN, BI, RW or DR")->required();
        conv_cmd->add_option("--value", conv.value)->required();
        conv_cmd->add_option("--unit", conv.unit, "Unit token, e.g. deg/sqrt(hr)");
        conv_cmd->add_option("--fs", conv.fs, "Sample rate in Hz")->required();
        conv_cmd->add_option("--direction", conv.direction)->check(CLI::IsMember({"to-sample", "to-physical"}));

        try
        {
                app.parse(argc, argv);
        }
        catch (const CLI::ParseError& e)
        {
                const int code = app.exit(e);
                return code == 0 ? 0 : static_cast<int>(ErrorClass::Usage);
        }

        try
        {
                if (*sim_cmd)
                {
                        return run_simulate(sim);
                }
                if (*wv_cmd)
                {
                        return run_wv(wv);
                }
                if (*fit_cmd)
                {
                        return run_fit(fit);
                }
                if (*mc_cmd)
                {
                        return run_mc(mc);
                }
                return run_convert(conv);
        }
        catch (const Error& e)
        {
                std::cerr << "wvcal: " << e.what() << "\n";
                return static_cast<int>(e.error_class());
        }
        catch (const std::filesystem::filesystem_error& e)
        {
                std::cerr << "wvcal: " << e.what() << "\n";
                return static_cast<int>(ErrorClass::Io);
        }
        catch (const std::exception& e)
        {
                std::cerr << "wvcal: " << e.what() << "\n";
                return static_cast<int>(ErrorClass::Usage);
        }
}
}
