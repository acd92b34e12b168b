#include "gexpect/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"gexpect: sublinear expectation experiments"};
    app.require_subcommand(1);

    std::string config;
    std::size_t threads = 0;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config, "experiment config (JSON)")->required();
    run->add_option("--threads", threads, "worker threads (0 = hardware)");
    run->add_option("--out", out_dir, "output directory");

    std::string report;
    std::string series;
    std::string plot_out;
    auto* plot = app.add_subcommand("plot", "export a report series as CSV");
    plot->add_option("report", report, "report.json")->required();
    plot->add_option("--series", series, "series name")->required();
    plot->add_option("--out", plot_out, "output directory (default: next to the report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return gexpect::exit_code::usage;
    }

    if (*run) {
        gexpect::set_thread_limit(threads);
        gexpect::RunOptions opts;
        if (!out_dir.empty()) {
            opts.out_dir = out_dir;
        }
        return gexpect::run_command(config, opts, std::cout, std::cerr);
    }
    std::optional<std::filesystem::path> dir;
    if (!plot_out.empty()) {
        dir = plot_out;
    }
    return gexpect::plot_command(report, series, dir, std::cout, std::cerr);
}
