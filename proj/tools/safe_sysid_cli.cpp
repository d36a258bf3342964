#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "safe_sysid/error.hpp"
#include "safe_sysid/kernels.hpp"
#include "safe_sysid/pipeline.hpp"

using namespace safe_sysid;

int main(int argc, char** argv) {
    CLI::App app{"Safe system identification with chance-constrained ELM models"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string model_path;
    app.add_option("-c,--config", config_path, "run configuration JSON");
    app.add_option("--set", overrides, "override a config field, e.g. --set risk.p_k=0.95");

    auto* generate = app.add_subcommand("generate", "write the training dataset");
    auto* train = app.add_subcommand("train", "fit the constrained model");
    auto* verify = app.add_subcommand("verify", "Monte Carlo rollouts and one-step audit");
    auto* exporter = app.add_subcommand("export", "plot-ready CSVs");
    auto* all = app.add_subcommand("all", "generate, train, verify and export");
    for (auto* sub : {generate, train, verify, exporter, all}) {
        sub->add_option("-c,--config", config_path, "run configuration JSON");
        sub->add_option("--set", overrides, "override a config field");
    }
    verify->add_option("--model", model_path, "model JSON (default: <output_dir>/model.json)");
    exporter->add_option("--model", model_path, "model JSON (default: <output_dir>/model.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitIo;
    }

    kernels::configure_threads_from_env();
    const std::optional<std::filesystem::path> model =
        model_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(model_path);
    try {
        const RunConfig cfg = load_config(config_path, overrides);
        if (generate->parsed()) return cmd_generate(cfg, std::cout);
        if (train->parsed()) return cmd_train(cfg, std::cout);
        if (verify->parsed()) return cmd_verify(cfg, model, std::cout);
        if (exporter->parsed()) return cmd_export(cfg, model, std::cout);
        return cmd_all(cfg, std::cout);
    } catch (const StructuralInfeasibility& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kExitInfeasible;
    } catch (const GenerationError& e) {
        std::cerr << "generation failed: " << e.what() << '\n';
        return kExitViolations;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
}
