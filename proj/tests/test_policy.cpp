#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "vlgor/data.hpp"
#include "vlgor/env.hpp"
#include "vlgor/lang.hpp"
#include "vlgor/policy.hpp"

using namespace vlgor;

namespace {

data::Dataset expert_data(int goals, int episodes, std::uint64_t seed) {
    std::vector<lang::StructuredGoal> gs = lang::enumerate_goals();
    gs.resize(static_cast<std::size_t>(goals));
    return data::collect_expert_dataset(gs, episodes, seed);
}

// One length-1 rollout: state `s`, the given action and reward, episode over.
data::Rollout single_transition(const env::BallState& s, int action, double reward) {
    data::Rollout r;
    r.goal = lang::enumerate_goals()[0];
    r.instruction = lang::realize(r.goal, 0);
    data::Step step;
    step.positions = s.flat();
    step.action = action;
    step.reward = reward;
    r.steps.push_back(step);
    r.final_positions = s.flat();
    return r;
}

void fill_params(policy::GoalConditionedNet& net, float value) {
    for (auto& p : net.params())
        for (std::size_t i = 0; i < p.size; ++i) p.value[i] = value;
}

float* named_param(policy::GoalConditionedNet& net, const std::string& name, std::size_t* size) {
    for (auto& p : net.params()) {
        if (p.name == name) {
            *size = p.size;
            return p.value;
        }
    }
    throw std::runtime_error("no parameter " + name);
}

std::vector<double> softmax40(const Eigen::Matrix<float, env::kNumActions, 1>& q) {
    const double mx = q.maxCoeff();
    std::vector<double> p(env::kNumActions);
    double z = 0.0;
    for (int a = 0; a < env::kNumActions; ++a) z += (p[static_cast<std::size_t>(a)] =
                                                         std::exp(q(a) - mx));
    for (double& v : p) v /= z;
    return p;
}

}  // namespace

TEST_CASE("behavior cloning starts at chance and overfits one transition") {
    data::Dataset real;
    real.manifest.vocabulary = lang::Vocabulary::builtin().words();
    const env::BallState s = env::reset(42);
    real.rollouts.push_back(single_transition(s, 13, 1.0));

    policy::TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch = 8;
    cfg.lr_max = 1e-3;
    cfg.resolution = 16;
    cfg.seed = 1;
    const data::MixedBatchSampler sampler{1.0, 8};
    policy::TrainResult result = policy::train_bc(real, nullptr, sampler, cfg);

    REQUIRE(result.logs.size() == 300);
    // The untrained head emits uniform logits: first loss is about ln 40.
    CHECK(std::abs(result.logs.front().loss - std::log(40.0)) <= 0.2);
    CHECK(result.logs.front().conservative_gap == 0.0);
    CHECK(result.min_conservative_gap == 0.0);

    const auto probs = softmax40(result.net.scores(s.flat(), real.rollouts[0].instruction.tokens));
    CHECK(probs[13] >= 0.99);
    CHECK(policy::act_greedy(result.net, s, real.rollouts[0].instruction).index == 13);

    CHECK_THROWS_AS(policy::train_bc(data::Dataset{}, nullptr, sampler, cfg),
                    std::invalid_argument);
}

TEST_CASE("greedy action extraction breaks ties toward the lowest index") {
    policy::GoalConditionedNet net(16, 3);
    const env::BallState s = env::reset(8);
    const lang::Instruction ins = lang::realize(lang::enumerate_goals()[5], 1);

    // All-zero parameters: every logit is the zero bias, a 40-way tie.
    fill_params(net, 0.0f);
    CHECK(policy::act_greedy(net, s, ins).index == 0);

    // A raised bias singles out one action...
    std::size_t bias_size = 0;
    float* bias = named_param(net, "head.q.bias", &bias_size);
    REQUIRE(bias_size == static_cast<std::size_t>(env::kNumActions));
    bias[17] = 2.5f;
    CHECK(policy::act_greedy(net, s, ins).index == 17);
    // ...and a constant shift of every logit never changes the choice.
    for (std::size_t i = 0; i < bias_size; ++i) bias[i] += 3.75f;
    CHECK(policy::act_greedy(net, s, ins).index == 17);
}

TEST_CASE("cql keeps the conservative gap nonnegative and tames off-data q") {
    const data::Dataset real = expert_data(4, 5, 6);
    policy::TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch = 32;
    cfg.lr_max = 1e-3;
    cfg.resolution = 16;
    cfg.seed = 2;
    const data::MixedBatchSampler sampler{1.0, 32};

    policy::CQLConfig conservative;  // alpha 1
    policy::TrainResult with = policy::train_cql(real, nullptr, sampler, cfg, conservative);
    policy::CQLConfig plain;
    plain.alpha = 0.0;
    policy::TrainResult without = policy::train_cql(real, nullptr, sampler, cfg, plain);

    // logsumexp of a row is never below any entry, so the gap cannot go
    // negative; training must preserve that invariant on every sample.
    CHECK(with.min_conservative_gap >= 0.0);
    CHECK(without.min_conservative_gap >= 0.0);
    REQUIRE(with.logs.size() == 8);
    for (const policy::EpochLog& log : with.logs) {
        CHECK(std::isfinite(log.loss));
        CHECK(log.conservative_gap >= 0.0);
    }

    // The penalty pushes unseen-action values down relative to the plain run.
    const double q_with = policy::mean_offdata_q(with.net, real, 400, 5);
    const double q_without = policy::mean_offdata_q(without.net, real, 400, 5);
    CHECK(q_with < q_without);

    CHECK_THROWS_AS(policy::train_cql(data::Dataset{}, nullptr, sampler, cfg, plain),
                    std::invalid_argument);
    policy::CQLConfig bad;
    bad.alpha = -1.0;
    CHECK_THROWS_AS(policy::train_cql(real, nullptr, sampler, cfg, bad), std::invalid_argument);
    bad.alpha = 1.0;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(policy::train_cql(real, nullptr, sampler, cfg, bad), std::invalid_argument);
}

TEST_CASE("cql recovers the tabular solution of a two-action mdp") {
    // One state, two actions, terminal transitions: with gamma = 0 the exact
    // Q-values are the rewards themselves, Q(s,0)=1 and Q(s,1)=0.
    const env::BallState s = env::reset(42);
    data::Dataset real;
    real.manifest.vocabulary = lang::Vocabulary::builtin().words();
    real.rollouts.push_back(single_transition(s, 0, 1.0));
    real.rollouts.push_back(single_transition(s, 1, 0.0));

    policy::TrainConfig cfg;
    cfg.epochs = 400;
    cfg.batch = 16;
    cfg.lr_max = 1e-3;
    cfg.resolution = 16;
    cfg.seed = 3;
    policy::CQLConfig cql;
    cql.alpha = 0.0;
    cql.gamma = 0.0;
    policy::TrainResult result =
        policy::train_cql(real, nullptr, data::MixedBatchSampler{1.0, 16}, cfg, cql);

    const auto q = result.net.scores(s.flat(), real.rollouts[0].instruction.tokens);
    CHECK(q(0) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(q(1)) <= 0.05);
}

TEST_CASE("off-data q excludes the dataset action exactly") {
    data::Dataset real;
    real.manifest.vocabulary = lang::Vocabulary::builtin().words();
    for (int i = 0; i < 3; ++i)
        real.rollouts.push_back(single_transition(env::reset(static_cast<std::uint64_t>(i)), 7, 0.0));

    policy::GoalConditionedNet net(16, 4);
    fill_params(net, 0.0f);
    CHECK(policy::mean_offdata_q(net, real, 200, 11) == 0.0);

    // Raise only action 7: it is the dataset action everywhere, so off-data
    // sampling never sees it.
    std::size_t bias_size = 0;
    float* bias = named_param(net, "head.q.bias", &bias_size);
    bias[7] = 5.0f;
    CHECK(policy::mean_offdata_q(net, real, 200, 11) == 0.0);
    // Raising everything moves the mean to exactly that level.
    for (std::size_t i = 0; i < bias_size; ++i) bias[i] = 1.0f;
    CHECK(policy::mean_offdata_q(net, real, 200, 11) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(policy::mean_offdata_q(net, real, 0, 11), std::invalid_argument);
    CHECK_THROWS_AS(policy::mean_offdata_q(net, data::Dataset{}, 10, 11), std::invalid_argument);
}

TEST_CASE("evaluation separates the expert from a random actor") {
    std::vector<lang::Instruction> instructions;
    const auto goals = lang::enumerate_goals();
    for (std::size_t i : {0u, 3u, 21u, 47u}) instructions.push_back(lang::realize(goals[i], 0));

    Rng expert_rng(0);
    const policy::Actor expert = [&expert_rng](const env::BallState& state,
                                               const lang::Instruction& ins) {
        return env::scripted_expert(state, ins.goal.view(), expert_rng).index;
    };
    const double expert_score = policy::evaluate(expert, instructions, 3, 50, 9);
    CHECK(expert_score == 100.0);

    Rng random_rng(1);
    const policy::Actor random = [&random_rng](const env::BallState&, const lang::Instruction&) {
        return random_rng.index(env::kNumActions);
    };
    const double random_score = policy::evaluate(random, instructions, 3, 50, 9);
    CHECK(random_score < expert_score);
    CHECK(random_score <= 60.0);

    // Same seed, same resets, same score.
    Rng replay_rng(1);
    const policy::Actor replay = [&replay_rng](const env::BallState&, const lang::Instruction&) {
        return replay_rng.index(env::kNumActions);
    };
    CHECK(policy::evaluate(replay, instructions, 3, 50, 9) == random_score);

    CHECK_THROWS_AS(policy::evaluate(expert, {}, 3, 50, 9), std::invalid_argument);
    CHECK_THROWS_AS(policy::evaluate(expert, instructions, 0, 50, 9), std::invalid_argument);
    CHECK_THROWS_AS(policy::evaluate(expert, instructions, 3, 0, 9), std::invalid_argument);
}

TEST_CASE("training runs are bit-deterministic and logs serialize") {
    const data::Dataset real = expert_data(2, 3, 14);
    policy::TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch = 16;
    cfg.resolution = 16;
    cfg.seed = 21;
    const data::MixedBatchSampler sampler{1.0, 16};

    policy::TrainResult a = policy::train_bc(real, nullptr, sampler, cfg);
    policy::TrainResult b = policy::train_bc(real, nullptr, sampler, cfg);
    REQUIRE(a.logs.size() == b.logs.size());
    for (std::size_t i = 0; i < a.logs.size(); ++i) {
        CHECK(a.logs[i].loss == b.logs[i].loss);
        CHECK(a.logs[i].lr == b.logs[i].lr);
    }
    auto pa = a.net.params();
    auto pb = b.net.params();
    bool identical = true;
    for (std::size_t i = 0; i < pa.size(); ++i)
        identical = identical && std::memcmp(pa[i].value, pb[i].value,
                                             pa[i].size * sizeof(float)) == 0;
    CHECK(identical);

    const auto path = std::filesystem::temp_directory_path() / "vlgor_train_log.csv";
    policy::write_train_log(path.string(), a.logs, "0123456789abcdef", 21);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# config_hash=0123456789abcdef seed=21");
    std::getline(in, line);
    CHECK(line == "epoch, loss, conservative_gap, mean_q, lr");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
    std::filesystem::remove(path);
}
