// Goal-conditioned offline RL: the fused vision+language policy/Q network,
// behavior cloning, discrete conservative Q-learning with a target network,
// greedy action extraction, and simulator-based success evaluation.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vlgor/data.hpp"
#include "vlgor/nn.hpp"

namespace vlgor::policy {

class GoalConditionedNet {
  public:
    GoalConditionedNet(int resolution, std::uint64_t seed);

    // logits or Q-values, [B, 40]
    nn::Matrix<float> forward(const nn::Matrix<float>& images, const std::vector<int>& tokens);
    void backward(const nn::Matrix<float>& glogits);

    // Single-state scores with internal rendering (no gradient bookkeeping
    // needed by callers).
    Eigen::Matrix<float, env::kNumActions, 1> scores(const Eigen::Matrix<double, 10, 1>& positions,
                                                     const std::vector<int>& tokens);

    std::vector<nn::ParamView<float>> params();
    int resolution() const { return resolution_; }

  private:
    int resolution_;
    int vis_features_;
    Rng init_rng_;  // declared before the layers so they initialize from it in order
    nn::Conv2d<float> conv1_;
    nn::ReLU<float> relu1_;
    nn::Conv2d<float> conv2_;
    nn::ReLU<float> relu2_;
    nn::Linear<float> vis_fc_;
    nn::Embedding<float> embed_;
    nn::MeanPool<float> pool_;
    nn::Linear<float> txt_fc1_;
    nn::ReLU<float> txt_relu_;
    nn::Linear<float> txt_fc2_;
    nn::Linear<float> fuse_;
    nn::ReLU<float> fuse_relu_;
    nn::Linear<float> head_;
};

struct TrainConfig {
    int epochs = 50;
    int batch = 128;
    double lr_max = 3e-4;
    double lr_min = 1e-6;
    std::uint64_t seed = 0;
    int resolution = 32;
};

struct CQLConfig {
    double alpha = 1.0;
    double gamma = 0.99;
    int target_sync_interval = 200;  // gradient steps between hard syncs
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;              // BC loss or Bellman MSE
    double conservative_gap = 0.0;  // 0 for BC
    double mean_q = 0.0;            // mean dataset-action Q, 0 for BC
    double lr = 0.0;
};

struct TrainResult {
    GoalConditionedNet net;
    std::vector<EpochLog> logs;
    double min_conservative_gap = 0.0;  // min over every sample of every batch
};

// `epoch, loss, conservative_gap, mean_q, lr` rows.
void write_train_log(const std::string& path, const std::vector<EpochLog>& logs,
                     const std::string& config_hash, std::uint64_t seed);

TrainResult train_bc(const data::Dataset& real, const data::Dataset* imaginary,
                     const data::MixedBatchSampler& sampler, const TrainConfig& cfg);

TrainResult train_cql(const data::Dataset& real, const data::Dataset* imaginary,
                      const data::MixedBatchSampler& sampler, const TrainConfig& cfg,
                      const CQLConfig& cql);

env::ActionIndex act_greedy(GoalConditionedNet& net, const env::BallState& state,
                            const lang::Instruction& instruction);

// Mean Q over uniformly sampled (state, non-dataset action) pairs — the
// out-of-distribution value level that conservatism suppresses.
double mean_offdata_q(GoalConditionedNet& net, const data::Dataset& dataset, int n_samples,
                      std::uint64_t seed);

using Actor = std::function<int(const env::BallState&, const lang::Instruction&)>;

// Success % over instructions x episodes: seeded unsatisfied resets, greedy
// steps, success = goal satisfied at any step within the horizon.
double evaluate(const Actor& actor, const std::vector<lang::Instruction>& instructions,
                int episodes_per_goal, int horizon, std::uint64_t seed);
double evaluate(GoalConditionedNet& net, const std::vector<lang::Instruction>& instructions,
                int episodes_per_goal, int horizon, std::uint64_t seed);

}  // namespace vlgor::policy
