// Run configuration: plain key=value files with dotted keys, CLI overrides,
// strict unknown-key rejection, and a stable experiment hash that ignores
// the ablation-matrix axes so related runs can be merged in reports.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlgor::cfg {

struct RunConfig {
    std::uint64_t seed = 0;
    int env_resolution = 32;
    double data_train_goal_fraction = 0.6;
    int data_episodes_per_goal = 20;
    double data_ratio = 0.5;
    std::vector<int> wm_budget = {2000};
    int wm_h = 1;
    int wm_epochs = 10;
    int wm_per_goal = 20;
    std::string wm_edit_kind = "both";
    std::string rl_algo = "bc";
    double rl_alpha = 1.0;
    double rl_gamma = 0.99;
    int rl_epochs = 50;
    int rl_batch = 128;
    std::string eval_tier = "counterfactual";
    int eval_episodes_per_goal = 5;
    int eval_horizon = 50;
    std::string output_dir = "out";
};

// Throws on unknown key or unparsable value.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// key=value lines, # comments, blank lines ignored.
RunConfig parse_file(const std::string& path);

// file (optional) -> --set overrides, then validation.
RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides);

void validate(const RunConfig& config);

// Canonical echo: one key=value per line, fixed key order.
std::string to_text(const RunConfig& config);

// FNV-1a hex over the canonical text minus the matrix axes (data.ratio,
// rl.algo, eval.tier, wm.edit_kind) and the per-run fields (seed,
// output_dir), so ablation rows and seed repeats share a hash.
std::string config_hash(const RunConfig& config);

}  // namespace vlgor::cfg
