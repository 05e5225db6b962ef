#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vlgor/config.hpp"
#include "vlgor/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"VLGOR pipeline: counterfactual imagination for goal-conditioned offline RL"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    auto* config_opt = app.add_option("--config", config_path, "key=value config file")
                           ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "seed override");
    auto* out_opt = app.add_option("--out", out_dir, "output directory override");
    app.add_option("--set", sets, "config override key=value (repeatable)");

    const std::vector<std::pair<std::string, std::string>> stages{
        {"make-goals", "write the train/rephrase/counterfactual/hard goal splits"},
        {"collect", "collect the real expert dataset on the train goals"},
        {"train-wm", "train one world model per wm.budget entry"},
        {"imagine", "generate imaginary rollouts for wm.edit_kind counterfactuals"},
        {"train-policy", "train the rl.algo policy on the real/imaginary mixture"},
        {"eval", "evaluate the rl.algo policy on eval.tier"},
        {"quality", "score every trained world model against held-out expert rollouts"},
        {"report", "merge eval and quality CSVs under --out into the ablation report"}};
    for (const auto& [name, desc] : stages) app.add_subcommand(name, desc)->fallthrough();

    CLI11_PARSE(app, argc, argv);
    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        std::vector<std::string> overrides;
        if (*seed_opt) overrides.push_back("seed=" + std::to_string(seed));
        if (*out_opt) overrides.push_back("output_dir=" + out_dir);
        overrides.insert(overrides.end(), sets.begin(), sets.end());
        const vlgor::cfg::RunConfig config =
            vlgor::cfg::resolve(*config_opt ? config_path : "", overrides);
        if (stage == "make-goals") {
            vlgor::pipeline::run_make_goals(config);
        } else if (stage == "collect") {
            vlgor::pipeline::run_collect(config);
        } else if (stage == "train-wm") {
            vlgor::pipeline::run_train_wm(config);
        } else if (stage == "imagine") {
            vlgor::pipeline::run_imagine(config);
        } else if (stage == "train-policy") {
            vlgor::pipeline::run_train_policy(config);
        } else if (stage == "eval") {
            vlgor::pipeline::run_eval(config);
        } else if (stage == "quality") {
            vlgor::pipeline::run_quality(config);
        } else {
            vlgor::pipeline::run_report(config.output_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << stage << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
