#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fedmoe/experiment.hpp"

namespace {

std::string read_text(const std::string& path)
{
    std::ifstream f(path);
    if (!f)
        throw fedmoe::ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Clustered federated learning with per-client mixture-of-experts personalization"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int parallel = 1;
    std::string log_level = "info";
    const auto levels = CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"});
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, critical, off")
        ->check(levels)
        ->capture_default_str();

    auto* run = app.add_subcommand("run", "run the experiment sweep described by a config file");
    run->add_option("config", config_path, "key=value config file")->required();
    run->add_option("--out", out_dir, "output directory (default: experiment.out)");
    run->add_option("--parallel", parallel, "runs executed concurrently")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "parse and validate a config, print the resolved form");
    validate->add_option("config", config_path, "key=value config file")->required();

    auto* exp = app.add_subcommand("export-data", "write generated client partitions as JSON-lines");
    exp->add_option("config", config_path, "key=value config file")->required();
    exp->add_option("--out", out_dir, "output directory (default: experiment.out)");

    for (auto* sub : {run, validate, exp})
        sub->add_option("--log-level", log_level, "trace, debug, info, warn, error, critical, off")->check(levels);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("fedmoe"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    fedmoe::ExperimentConfig cfg;
    try {
        cfg = fedmoe::parse_config(read_text(config_path));
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }

    try {
        if (*validate) {
            std::cout << fedmoe::serialize_config(cfg);
            return 0;
        }
        const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out_dir);
        if (*exp) {
            fedmoe::export_data(cfg, out);
            spdlog::info("partitions written to {}", out.string());
            return 0;
        }
        fedmoe::RunOptions opts;
        opts.out_dir = out;
        opts.parallel = parallel;
        opts.log = [](const std::string& msg) { spdlog::info("{}", msg); };
        const int status = fedmoe::run_experiment(cfg, opts);
        spdlog::info("results in {} ({})", out.string(), status == 0 ? "complete" : "some runs failed");
        return status;
    } catch (const fedmoe::ConfigError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
