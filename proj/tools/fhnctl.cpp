#include "fhn/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

fhn::OcpConfig resolve(const std::string& source, bool coarse)
{
    if (fhn::is_preset(source)) return fhn::preset(source, coarse);
    if (!std::filesystem::exists(source))
        throw std::invalid_argument("'" + source + "' is neither a preset nor a config file");
    fhn::OcpConfig c = fhn::load_config(source);
    if (coarse) std::cerr << "fhnctl: --coarse only applies to presets; ignored for " << source << '\n';
    return c;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Optimal control of the convective FitzHugh-Nagumo system"};
    app.require_subcommand(1);

    std::string source, out, beta;
    bool coarse = false, quiet = false;
    double vmax = -1.0, mu = -1.0;
    int max_iterations = -1;

    auto* run = app.add_subcommand("run", "run a preset or a config file");
    run->add_option("source", source, "preset name or config path")->required();
    run->add_flag("--coarse", coarse, "desk-scale resolution");
    run->add_option("--out", out, "output directory");
    run->add_option("--vmax", vmax, "peak flow speed")->check(CLI::NonNegativeNumber);
    run->add_option("--mu", mu, "sparsity weight")->check(CLI::NonNegativeNumber);
    run->add_option("--beta-variant", beta, "fletcher-reeves | polak-ribiere | hestenes-stiefel | hager-zhang");
    run->add_option("--max-iterations", max_iterations, "optimizer iteration limit")->check(CLI::NonNegativeNumber);
    run->add_flag("-q,--quiet", quiet, "no progress output");

    auto* show = app.add_subcommand("show", "print the resolved configuration");
    show->add_option("source", source, "preset name or config path")->required();
    show->add_flag("--coarse", coarse, "desk-scale resolution");

    app.add_subcommand("presets", "list the preset names");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("presets")) {
            for (const auto& n : fhn::preset_names()) std::cout << n << '\n';
            return 0;
        }
        fhn::OcpConfig c = resolve(source, coarse);
        if (app.got_subcommand("show")) {
            std::cout << fhn::serialize_config(c);
            return 0;
        }
        if (!out.empty()) c.experiment.output = out;
        if (vmax >= 0.0) fhn::override_vmax(c, vmax);
        if (mu >= 0.0) fhn::override_sparsity(c, mu);
        if (!beta.empty()) c.solver.optimizer.beta = fhn::parse_beta_variant(beta);
        if (max_iterations >= 0) c.solver.optimizer.max_iterations = max_iterations;

        std::filesystem::create_directories(c.experiment.output);
        std::ofstream(std::filesystem::path(c.experiment.output) / "config.txt") << fhn::serialize_config(c);
        const auto report = fhn::run_experiment(c, quiet ? nullptr : &std::cerr);
        for (const auto& r : report.runs)
            std::cout << fhn::to_string(c.sweep.parameter) << '=' << fhn::format_value(r.parameter)
                      << "  J=" << fhn::format_value(r.state.value.total)
                      << "  iterations=" << r.state.iterations << "  " << fhn::to_string(r.state.status) << '\n';
        std::cout << "results in " << c.experiment.output << '\n';
    } catch (const std::exception& e) {
        std::cerr << "fhnctl: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
