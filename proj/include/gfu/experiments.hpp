#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace gfu::cli {

struct ExperimentInfo {
    std::string name;
    std::string ref;    // one-line citation tag of the certified claim
    std::string claim;  // one-line statement of what the run checks
};

// Stable-ordered table of every experiment the runner knows.
const std::vector<ExperimentInfo>& experiment_table();
const ExperimentInfo& experiment_info(const std::string& name);

struct Check {
    std::string metric;
    double value;
    std::string cmp;  // "lt", "le", "gt", "ge"
    double threshold;
    bool pass;
};

struct RunOutcome {
    nlohmann::ordered_json results;
    std::vector<std::string> trace_csv;  // header line first
    bool pass = false;
};

// Parses and strictly validates a raw config (unknown keys rejected, required
// fields enforced, referenced files checked), filling defaults. Paths are
// resolved relative to `config_dir`. Throws ValidationError with a field
// diagnostic. The GFU_ENUM_CAP environment variable overrides the cap.
nlohmann::ordered_json resolve_config(const nlohmann::json& raw, const std::string& config_dir);

// Runs a resolved config; pure compute, no file output.
RunOutcome run_experiment(const nlohmann::ordered_json& resolved);

// Runs and writes results.json, trace.csv and resolved-config.json under
// out_dir (created if needed). Returns the process exit code contract:
// 0 pass, 2 threshold failure.
int run_and_write(const nlohmann::ordered_json& resolved, const std::string& out_dir);

}  // namespace gfu::cli
