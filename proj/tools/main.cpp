#include "mskam/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace mskam;
    CLI::App app{"Multi-scale KAM toolkit: normal forms, KAM iteration, nonresonance conditions and resonant reduction"};
    app.require_subcommand(1, 1);

    std::string config_path, out_dir, preset, emit_format;
    std::optional<long long> seed;
    std::optional<int> workers;
    bool print_config = false;
    app.add_option("--config", config_path, "TOML or JSON config file (.json selects JSON)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "random seed (Monte-Carlo grids)");
    app.add_option("--workers", workers, "worker threads for parallel stages");
    app.add_option("--preset", preset, "example-6.1 | example-6.2 | example-6.3 | model | identity | inline");
    app.add_flag("--print-config", print_config, "print the effective config as TOML and exit");
    app.add_option("--emit", emit_format, "with --print-config: toml (default) or json")->check(CLI::IsMember({"toml", "json"}));

    for (const auto& m : known_modes()) app.add_subcommand(m, "run the " + m + " pipeline")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    RunConfig cfg;
    try {
        nlohmann::json raw = config_path.empty() ? nlohmann::json::object() : read_config_file(config_path);
        apply_env_overrides(raw, process_environment());
        raw["mode"] = app.get_subcommands().front()->get_name();
        if (!preset.empty()) raw["preset"] = preset;
        if (seed) raw["seed"] = *seed;
        if (workers) raw["workers"] = *workers;
        if (!out_dir.empty()) raw["output"] = out_dir;
        cfg = resolve_config(raw);
    } catch (const std::exception& e) {
        std::cerr << "mskam: stage config: " << e.what() << "\n";
        return exit_config;
    }

    if (print_config) {
        std::cout << (emit_format == "json" ? emit_json(cfg) : emit_toml(cfg));
        return exit_ok;
    }

    RunReport rep = run_mode(cfg);
    for (const auto& f : rep.outputs) std::cout << "wrote " << (std::filesystem::path(cfg.output) / f).string() << "\n";
    std::cout << "wrote " << (std::filesystem::path(cfg.output) / "manifest.json").string() << "\n";
    std::cout << "status " << rep.status << " (exit " << rep.exit_code << ")\n";
    return rep.exit_code;
}
