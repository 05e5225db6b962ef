// Offline dataset machinery: expert rollout collection, JSON-lines
// persistence, reward labeling, transition flattening, and the fixed-ratio
// real/imaginary batch sampler.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlgor/env.hpp"
#include "vlgor/lang.hpp"
#include "vlgor/nn.hpp"
#include "vlgor/rng.hpp"

namespace vlgor::data {

inline constexpr int kHorizon = 50;
inline constexpr const char* kDatasetFormat = "vlgor-ds-1";

enum class Provenance : int { real = 0, imaginary = 1 };

// One timestep: the pre-action positions, the action taken there, and the
// reward of the resulting post-action state.
struct Step {
    Eigen::Matrix<double, 10, 1> positions;
    int action = 0;
    double reward = 0.0;
};

struct Rollout {
    lang::StructuredGoal goal;
    lang::Instruction instruction;
    std::vector<Step> steps;
    Provenance provenance = Provenance::real;
    Eigen::Matrix<double, 10, 1> final_positions;  // state after the last action

    int length() const { return static_cast<int>(steps.size()); }
    // Positions after t actions, t in [0, length()].
    const Eigen::Matrix<double, 10, 1>& state_after(int t) const;
};

struct Manifest {
    std::string format = kDatasetFormat;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<std::string> vocabulary;
};

struct Dataset {
    Manifest manifest;
    std::vector<Rollout> rollouts;

    std::vector<int> rollouts_for_goal(const lang::StructuredGoal& goal) const;
    // Distinct goals in first-appearance order.
    std::vector<lang::StructuredGoal> distinct_goals() const;
    std::size_t transition_count() const;
};

// Fresh, seeded reset that is not already satisfied for the goal (re-rolled
// deterministically otherwise), so every episode requires at least one step.
env::BallState reset_unsatisfied(std::uint64_t seed, std::initializer_list<std::uint64_t> path,
                                 const env::StructuredGoalView& goal);

// One scripted-expert episode from `start`: horizon-capped, terminated on
// success; `shake_rng` feeds the expert's blocked-state fallback.
Rollout expert_rollout(const lang::StructuredGoal& goal, const lang::Instruction& instruction,
                       const env::BallState& start, Rng& shake_rng, int horizon = kHorizon);

// Scripted-expert episodes: episodes_per_goal per goal, horizon-capped,
// terminated on success, instruction templates rotating over the train set.
// Per-episode RNG streams are derived from (seed, goal index, episode), so
// results do not depend on collection order.
Dataset collect_expert_dataset(const std::vector<lang::StructuredGoal>& goals,
                               int episodes_per_goal, std::uint64_t seed,
                               const std::string& config_hash = "");

void save(const Dataset& dataset, const std::string& path);
Dataset load(const std::string& path);

// Recomputes every step's reward from its post-step positions under `goal`;
// all other fields preserved.
Rollout label_rewards(const Rollout& rollout, const lang::StructuredGoal& goal);

struct MixedBatchSampler {
    double ratio = 0.5;  // fraction of real transitions per batch
    int batch = 128;

    int real_per_batch() const;  // exactly round(ratio * batch)
};

// Flattened transition view used by RL training: rollout r, step t maps to
// (s_t, tokens, a_t, r_t, s_{t+1}, done at the rollout's last step).
struct TransitionRef {
    int rollout = 0;
    int t = 0;
};

std::vector<TransitionRef> flatten_transitions(const Dataset& dataset);

struct Batch {
    int size = 0;
    int resolution = 0;
    nn::Matrix<float> images;       // [B, 3*res*res] CHW
    nn::Matrix<float> next_images;  // [B, 3*res*res] CHW
    std::vector<int> tokens;        // B * lang::kTokenLength
    std::vector<int> actions;       // B
    std::vector<float> rewards;     // B
    std::vector<float> dones;       // B
};

// Renders state into `dest` (size 3*res*res) in CHW layout.
void render_chw(const Eigen::Matrix<double, 10, 1>& positions, int resolution, float* dest);

// Uniform-with-replacement draw of exactly real_per_batch() real transitions
// and batch - real_per_batch() imaginary ones; images rendered on the fly.
Batch sample_batch(const Dataset& real, const std::vector<TransitionRef>& real_refs,
                   const Dataset* imaginary, const std::vector<TransitionRef>& imaginary_refs,
                   const MixedBatchSampler& sampler, int resolution, Rng& rng);

// Concatenates rollouts of several datasets (manifest taken from the first).
Dataset merge(const std::vector<Dataset>& parts);

}  // namespace vlgor::data
