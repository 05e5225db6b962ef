// Surrogate world model: f(s_0 image, instruction, action) -> (next state,
// next action). Trains on sub-trajectory samples from real rollouts and
// synthesizes imaginary rollouts from counterfactual instructions by
// chaining one-step predictions.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlgor/data.hpp"
#include "vlgor/metrics.hpp"
#include "vlgor/nn.hpp"

namespace vlgor::wm {

inline constexpr int kNullAction = env::kNumActions;       // sentinel id 40
inline constexpr int kActionInputs = env::kNumActions + 1; // one-hot width 41

struct GenerationConfig {
    int h = 1;             // prediction horizon used in training
    int max_length = 50;   // generated rollout cap
    bool stop_on_goal = true;
};

class WorldModelNet {
  public:
    WorldModelNet(int resolution, std::uint64_t seed);

    struct Output {
        nn::Matrix<float> state;          // [B, 10]
        nn::Matrix<float> action_scores;  // [B, 40]
    };

    // tokens: batch * kTokenLength ids; actions: one id in [0, 41) per row.
    Output forward(const nn::Matrix<float>& images, const std::vector<int>& tokens,
                   const std::vector<int>& actions);
    void backward(const nn::Matrix<float>& gstate, const nn::Matrix<float>& gaction);

    struct Prediction {
        Eigen::Matrix<double, 10, 1> positions;  // clamped to [r, 1-r]
        Eigen::Matrix<float, env::kNumActions, 1> action_scores;
        int action = 0;  // argmax, lowest index on ties
    };
    // Renders positions internally at the model's resolution.
    Prediction predict(const Eigen::Matrix<double, 10, 1>& positions,
                       const std::vector<int>& tokens, int action_or_null);

    std::vector<nn::ParamView<float>> params();
    int resolution() const { return resolution_; }

  private:
    int resolution_;
    int vis_features_;
    int vocab_;
    Rng init_rng_;  // declared before the layers so they initialize from it in order
    nn::Conv2d<float> conv1_;
    nn::ReLU<float> relu1_;
    nn::Conv2d<float> conv2_;
    nn::ReLU<float> relu2_;
    nn::Linear<float> vis_fc_;
    nn::Embedding<float> embed_;
    nn::MeanPool<float> pool_;
    nn::Linear<float> txt_fc_;
    nn::Linear<float> act_fc_;
    nn::Linear<float> fuse_;
    nn::ReLU<float> fuse_relu_;
    nn::Linear<float> state_head_;
    nn::Linear<float> action_head_;
};

struct FinetuneSample {
    Eigen::Matrix<double, 10, 1> s0;
    std::vector<int> tokens;
    int action = kNullAction;  // input action id, kNullAction for NULL mode
    Eigen::Matrix<double, 10, 1> target_state;
    int target_action = 0;
};

// Uniform without-replacement draw of budget samples, action-mode : NULL-mode
// mixed 3:1. Action mode: (s_t, G, a_t) -> (s_{t+h}, a_{t+h}); NULL mode:
// (s_t, G, NULL) -> (s_{t+1}, a_t).
std::vector<FinetuneSample> make_finetune_set(const data::Dataset& dataset, int h, int budget,
                                              Rng& rng);

struct TrainWmConfig {
    int epochs = 10;
    int batch = 128;
    double lr_max = 3e-4;
    double lr_min = 1e-6;
    std::uint64_t seed = 0;
};

// Minimizes MSE(state) + MSE(action one-hot) with Adam + cosine schedule;
// per-epoch mean losses appended to *epoch_losses when given.
WorldModelNet train_worldmodel(const std::vector<FinetuneSample>& samples, int resolution,
                               const TrainWmConfig& cfg,
                               std::vector<double>* epoch_losses = nullptr);

// Mean state-head MSE of a trained model over samples (evaluation only).
double state_mse(WorldModelNet& net, const std::vector<FinetuneSample>& samples);

data::Rollout generate_rollout(WorldModelNet& net, const Eigen::Matrix<double, 10, 1>& s0,
                               const lang::Instruction& instruction, const GenerationConfig& cfg);

// metrics::RolloutGenerator adapters: the trained net, and the true-dynamics
// oracle (environment step + scripted expert) used as a perfect-model stand-in.
class WmGenerator : public metrics::RolloutGenerator {
  public:
    WmGenerator(WorldModelNet& net, GenerationConfig cfg) : net_(&net), cfg_(cfg) {}
    data::Rollout generate(const Eigen::Matrix<double, 10, 1>& s0,
                           const lang::Instruction& instruction) const override;

  private:
    WorldModelNet* net_;
    GenerationConfig cfg_;
};

class OracleGenerator : public metrics::RolloutGenerator {
  public:
    explicit OracleGenerator(std::uint64_t seed, GenerationConfig cfg = {})
        : seed_(seed), cfg_(cfg) {}
    data::Rollout generate(const Eigen::Matrix<double, 10, 1>& s0,
                           const lang::Instruction& instruction) const override;

  private:
    std::uint64_t seed_;
    GenerationConfig cfg_;
};

enum class EditKind : int { target = 0, behavior = 1, both = 2 };

EditKind parse_edit_kind(const std::string& name);
std::string edit_kind_name(EditKind kind);

// All structural edits of `goal` under `kind`, deterministic order.
std::vector<lang::StructuredGoal> enumerate_edits(const lang::StructuredGoal& goal, EditKind kind);

// For every edited goal not already in the source dataset, generates
// per_goal imaginary rollouts; each starts from the s_0 of a uniformly
// sampled source rollout of the goal the edit came from.
data::Dataset counterfactual_generate(const metrics::RolloutGenerator& generator,
                                      const data::Dataset& source, EditKind kind, int per_goal,
                                      std::uint64_t seed);

}  // namespace vlgor::wm
