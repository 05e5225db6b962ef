// Stage orchestration: each subcommand reads its predecessor's artifacts
// from output_dir, verifies the embedded config hash, and writes its own
// artifacts, so stages can be rerun and tested in isolation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlgor/config.hpp"
#include "vlgor/lang.hpp"

namespace vlgor::pipeline {

inline constexpr const char* kGoalsFormat = "vlgor-goals-1";
inline constexpr const char* kWmArch = "vlgor-wm";
inline constexpr const char* kPolicyArch = "vlgor-policy";

struct Paths {
    std::string root;

    explicit Paths(std::string output_dir) : root(std::move(output_dir)) {}

    std::string lock() const { return root + "/.lock"; }
    std::string config_echo() const { return root + "/config.txt"; }
    std::string goals(const std::string& tier) const { return root + "/goals_" + tier + ".json"; }
    std::string dataset_real() const { return root + "/dataset_real.vlgor.jsonl"; }
    std::string imaginary(const std::string& kind) const {
        return root + "/imaginary_" + kind + ".vlgor.jsonl";
    }
    std::string wm_checkpoint(int budget) const {
        return root + "/wm_budget" + std::to_string(budget) + ".ckpt";
    }
    std::string wm_loss_csv(int budget) const {
        return root + "/wm_loss_budget" + std::to_string(budget) + ".csv";
    }
    std::string policy_checkpoint(const std::string& algo) const {
        return root + "/policy_" + algo + ".ckpt";
    }
    std::string train_log(const std::string& algo) const {
        return root + "/trainlog_" + algo + ".csv";
    }
    std::string eval_csv(const std::string& algo, const std::string& tier) const {
        return root + "/eval_" + algo + "_" + tier + ".csv";
    }
    std::string quality_csv() const { return root + "/quality.csv"; }
    std::string report_ablation() const { return root + "/report_ablation.csv"; }
    std::string report_quality() const { return root + "/report_quality.csv"; }
};

// Creates <dir>/.lock exclusively and removes it on destruction; throws if
// another command holds it.
class StageLock {
  public:
    explicit StageLock(const std::string& dir);
    ~StageLock();
    StageLock(const StageLock&) = delete;
    StageLock& operator=(const StageLock&) = delete;

  private:
    std::string path_;
};

struct GoalsFile {
    std::string tier;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<lang::StructuredGoal> goals;
    std::vector<lang::Instruction> instructions;
};

GoalsFile read_goals_file(const std::string& path);

struct EvalRow {
    std::string algo;
    std::string tier;
    std::string method;  // baseline | wo_target | wo_behavior | full
    double success_rate_pct = 0.0;
    long long episodes = 0;
    std::uint64_t seed = 0;
};

std::vector<EvalRow> read_eval_csv(const std::string& path, std::string* config_hash = nullptr);

// The ablation-arm name implied by the artifacts train-policy consumed.
std::string method_for(double ratio, const std::vector<std::string>& edit_kinds);

void run_make_goals(const cfg::RunConfig& config);
void run_collect(const cfg::RunConfig& config);
void run_train_wm(const cfg::RunConfig& config);
void run_imagine(const cfg::RunConfig& config);
void run_train_policy(const cfg::RunConfig& config);
void run_eval(const cfg::RunConfig& config);
void run_quality(const cfg::RunConfig& config);

// Scans run directories directly under `root` (and `root` itself), merges
// their eval and quality CSVs, and writes report_ablation.csv and
// report_quality.csv into `root`. Refuses mismatched config hashes and
// incomplete ablation matrices.
void run_report(const std::string& root);

}  // namespace vlgor::pipeline
