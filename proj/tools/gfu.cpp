#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gfu/errors.hpp"
#include "gfu/experiments.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw gfu::ValidationError("cannot open config " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw gfu::ValidationError(path + ": " + e.what());
    }
}

nlohmann::ordered_json resolve(const std::string& path, std::optional<long> seed,
                               std::optional<std::string> out) {
    nlohmann::json raw = read_config(path);
    if (seed && raw.is_object()) raw["seed"] = *seed;
    if (out && raw.is_object()) raw["out"] = *out;
    try {
        return gfu::cli::resolve_config(raw, fs::path(path).parent_path().string());
    } catch (const gfu::ValidationError& e) {
        throw gfu::ValidationError(path + ": " + e.what());
    }
}

int run_one(const std::string& path, std::optional<long> seed,
            std::optional<std::string> out) {
    nlohmann::ordered_json resolved;
    try {
        resolved = resolve(path, seed, out);
    } catch (const gfu::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    try {
        const int code = gfu::cli::run_and_write(resolved, resolved.at("out"));
        std::cout << path << ": " << (code == 0 ? "PASS" : "FAIL") << " (results in "
                  << resolved.at("out").get<std::string>() << ")\n";
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << path << ": " << e.what() << "\n";
        return 1;
    }
}

int run_batch(const std::vector<std::string>& paths, std::optional<long> seed,
              std::optional<std::string> out, int jobs) {
    if (paths.size() == 1 || jobs <= 1) {
        int worst = 0;
        for (const auto& p : paths) worst = std::max(worst, run_one(p, seed, out));
        return worst;
    }
    // One process per config, at most `jobs` in flight.
    std::vector<pid_t> running;
    int worst = 0;
    auto reap = [&](bool block) {
        int status = 0;
        const pid_t pid = waitpid(-1, &status, block ? 0 : WNOHANG);
        if (pid > 0) {
            running.erase(std::remove(running.begin(), running.end(), pid), running.end());
            worst = std::max(worst, WIFEXITED(status) ? WEXITSTATUS(status) : 1);
        }
        return pid > 0;
    };
    for (const auto& p : paths) {
        while (static_cast<int>(running.size()) >= jobs) reap(true);
        const pid_t pid = fork();
        if (pid == 0) _exit(run_one(p, seed, out));
        if (pid < 0) {
            std::cerr << "error: fork failed\n";
            return 1;
        }
        running.push_back(pid);
    }
    while (!running.empty()) reap(true);
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gfu: GFlowNet unification lab - reproducible desk-scale experiments"};
    app.require_subcommand(1);

    std::vector<std::string> configs;
    std::optional<long> seed;
    std::optional<std::string> out;
    int jobs = 1;

    CLI::App* run = app.add_subcommand("run", "run experiment config(s)");
    run->add_option("config", configs, "config file(s), JSON")->required();
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out, "override the output directory");
    run->add_option("--jobs", jobs, "run configs in up to N parallel processes");

    CLI::App* list = app.add_subcommand("list", "list experiments and the claims they check");

    std::vector<std::string> validate_configs;
    CLI::App* validate = app.add_subcommand("validate", "validate config(s) without running");
    validate->add_option("config", validate_configs, "config file(s), JSON")->required();

    CLI11_PARSE(app, argc, argv);

    if (list->parsed()) {
        for (const auto& info : gfu::cli::experiment_table())
            std::printf("%-15s %-18s %s\n", info.name.c_str(), info.ref.c_str(),
                        info.claim.c_str());
        return 0;
    }
    if (validate->parsed()) {
        int code = 0;
        for (const auto& p : validate_configs) {
            try {
                resolve(p, std::nullopt, std::nullopt);
                std::cout << p << ": OK\n";
            } catch (const gfu::ValidationError& e) {
                std::cerr << "error: " << e.what() << "\n";
                code = 1;
            }
        }
        return code;
    }
    return run_batch(configs, seed, out, jobs);
}
