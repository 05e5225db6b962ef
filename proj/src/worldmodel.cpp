#include "vlgor/worldmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace vlgor::wm {

WorldModelNet::WorldModelNet(int resolution, std::uint64_t seed)
    : resolution_(resolution),
      vis_features_([resolution] {
          const int c1 = (resolution - 4) / 2 + 1;
          const int c2 = (c1 - 4) / 2 + 1;
          if (c2 < 1) throw std::invalid_argument("resolution too small for the vision encoder");
          return 16 * c2 * c2;
      }()),
      vocab_(static_cast<int>(lang::Vocabulary::builtin().size())),
      init_rng_(Rng::derived(seed, {0x301ULL})),
      conv1_(3, 8, 4, 2, init_rng_),
      conv2_(8, 16, 4, 2, init_rng_),
      vis_fc_(vis_features_, 128, init_rng_),
      embed_(lang::Vocabulary::builtin().size(), 32, init_rng_),
      txt_fc_(32, 64, init_rng_),
      act_fc_(kActionInputs, 32, init_rng_),
      fuse_(128 + 64 + 32, 256, init_rng_),
      state_head_(256, 10, init_rng_),
      // The action decoder is deliberately linear in [vision, bag-of-words,
      // action code] and bypasses the fused trunk and the trained embeddings.
      // With language entering only as raw word indicators through a linear
      // map, the head can only learn additive word-to-action structure, which
      // extrapolates to edited instructions (unseen word combinations)
      // instead of memorizing the training pairs.
      action_head_(128 + vocab_ + 32, env::kNumActions, init_rng_) {}

WorldModelNet::Output WorldModelNet::forward(const nn::Matrix<float>& images,
                                             const std::vector<int>& tokens,
                                             const std::vector<int>& actions) {
    const long batch = images.rows();
    if (static_cast<long>(actions.size()) != batch)
        throw std::invalid_argument("world model: action count does not match batch");
    const int c1 = conv1_.out_spatial(resolution_);
    nn::Matrix<float> v = relu1_.forward(conv1_.forward(images, resolution_, resolution_));
    v = relu2_.forward(conv2_.forward(v, c1, c1));
    v = vis_fc_.forward(v);

    nn::Matrix<float> txt = txt_fc_.forward(pool_.forward(
        embed_.forward(tokens, static_cast<int>(batch), lang::kTokenLength),
        lang::kTokenLength, 32));

    nn::Matrix<float> bow = nn::Matrix<float>::Zero(batch, vocab_);
    for (long r = 0; r < batch; ++r) {
        for (int t = 0; t < lang::kTokenLength; ++t) {
            const int id = tokens[static_cast<std::size_t>(r) * lang::kTokenLength + t];
            bow(r, id) += 1.0f / lang::kTokenLength;
        }
    }

    nn::Matrix<float> onehot = nn::Matrix<float>::Zero(batch, kActionInputs);
    for (long r = 0; r < batch; ++r) {
        const int a = actions[static_cast<std::size_t>(r)];
        if (a < 0 || a >= kActionInputs)
            throw std::invalid_argument("world model: action id out of range");
        onehot(r, a) = 1.0f;
    }
    nn::Matrix<float> act = act_fc_.forward(onehot);

    nn::Matrix<float> fused(batch, v.cols() + txt.cols() + act.cols());
    fused << v, txt, act;
    const nn::Matrix<float> h = fuse_relu_.forward(fuse_.forward(fused));
    nn::Matrix<float> ha(batch, v.cols() + pooled.cols() + act.cols());
    ha << v, pooled, act;
    Output out;
    out.state = state_head_.forward(h);
    out.action_scores = action_head_.forward(ha);
    return out;
}

void WorldModelNet::backward(const nn::Matrix<float>& gstate, const nn::Matrix<float>& gaction) {
    const nn::Matrix<float> gha = action_head_.backward(gaction);
    const nn::Matrix<float> gfused =
        fuse_.backward(fuse_relu_.backward(state_head_.backward(gstate)));
    nn::Matrix<float> gv = gfused.leftCols(128);
    gv += gha.leftCols(128);
    const nn::Matrix<float> gtxt = gfused.middleCols(128, 64);
    nn::Matrix<float> gact = gfused.rightCols(32);
    gact += gha.rightCols(32);
    act_fc_.backward(gact);  // one-hot input: no grad to propagate further
    nn::Matrix<float> gpool = txt_fc_.backward(gtxt);
    gpool += gha.middleCols(128, 32);
    embed_.backward(pool_.backward(gpool));
    nn::Matrix<float> gconv = conv2_.backward(relu2_.backward(vis_fc_.backward(gv)));
    conv1_.backward(relu1_.backward(gconv));
}

WorldModelNet::Prediction WorldModelNet::predict(const Eigen::Matrix<double, 10, 1>& positions,
                                                 const std::vector<int>& tokens,
                                                 int action_or_null) {
    nn::Matrix<float> image(1, 3L * resolution_ * resolution_);
    data::render_chw(positions, resolution_, image.row(0).data());
    std::vector<int> padded(tokens);
    padded.resize(lang::kTokenLength, lang::Vocabulary::kPad);
    const Output out = forward(image, padded, {action_or_null});
    Prediction pred;
    for (int i = 0; i < 10; ++i) {
        pred.positions(i) = std::clamp(static_cast<double>(out.state(0, i)), env::kRadius,
                                       1.0 - env::kRadius);
    }
    pred.action = 0;
    for (int a = 0; a < env::kNumActions; ++a) {
        pred.action_scores(a) = out.action_scores(0, a);
        if (out.action_scores(0, a) > out.action_scores(0, pred.action)) pred.action = a;
    }
    return pred;
}

std::vector<nn::ParamView<float>> WorldModelNet::params() {
    std::vector<nn::ParamView<float>> out;
    conv1_.collect("vision.conv1", out);
    conv2_.collect("vision.conv2", out);
    vis_fc_.collect("vision.fc", out);
    embed_.collect("text.embed", out);
    txt_fc_.collect("text.fc", out);
    act_fc_.collect("action.fc", out);
    fuse_.collect("fusion.fc", out);
    state_head_.collect("head.state", out);
    action_head_.collect("head.action", out);
    return out;
}

std::vector<FinetuneSample> make_finetune_set(const data::Dataset& dataset, int h, int budget,
                                              Rng& rng) {
    if (h < 1) throw std::invalid_argument("make_finetune_set: h must be >= 1");
    if (budget < 1) throw std::invalid_argument("make_finetune_set: budget must be >= 1");
    std::vector<data::TransitionRef> action_pool;  // t + h <= len - 1
    std::vector<data::TransitionRef> null_pool;    // any t
    for (int r = 0; r < static_cast<int>(dataset.rollouts.size()); ++r) {
        const int len = dataset.rollouts[static_cast<std::size_t>(r)].length();
        for (int t = 0; t + h <= len - 1; ++t) action_pool.push_back({r, t});
        for (int t = 0; t < len; ++t) null_pool.push_back({r, t});
    }
    const int n_action = budget * 3 / 4;
    const int n_null = budget - n_action;
    if (n_action > static_cast<int>(action_pool.size()) ||
        n_null > static_cast<int>(null_pool.size()))
        throw std::runtime_error("make_finetune_set: budget " + std::to_string(budget) +
                                 " exceeds available pairs (" + std::to_string(action_pool.size()) +
                                 " action-mode, " + std::to_string(null_pool.size()) +
                                 " NULL-mode)");
    rng.shuffle(action_pool);
    rng.shuffle(null_pool);
    std::vector<FinetuneSample> samples;
    samples.reserve(static_cast<std::size_t>(budget));
    for (int i = 0; i < n_action; ++i) {
        const auto& ref = action_pool[static_cast<std::size_t>(i)];
        const data::Rollout& rollout = dataset.rollouts[static_cast<std::size_t>(ref.rollout)];
        FinetuneSample s;
        s.s0 = rollout.steps[static_cast<std::size_t>(ref.t)].positions;
        s.tokens = rollout.instruction.tokens;
        s.action = rollout.steps[static_cast<std::size_t>(ref.t)].action;
        s.target_state = rollout.steps[static_cast<std::size_t>(ref.t + h)].positions;
        s.target_action = rollout.steps[static_cast<std::size_t>(ref.t + h)].action;
        samples.push_back(std::move(s));
    }
    for (int i = 0; i < n_null; ++i) {
        const auto& ref = null_pool[static_cast<std::size_t>(i)];
        const data::Rollout& rollout = dataset.rollouts[static_cast<std::size_t>(ref.rollout)];
        FinetuneSample s;
        s.s0 = rollout.steps[static_cast<std::size_t>(ref.t)].positions;
        s.tokens = rollout.instruction.tokens;
        s.action = kNullAction;
        s.target_state = rollout.state_after(ref.t + 1);
        s.target_action = rollout.steps[static_cast<std::size_t>(ref.t)].action;
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace {

struct WmBatch {
    nn::Matrix<float> images;
    std::vector<int> tokens;
    std::vector<int> actions;
    nn::Matrix<float> target_state;
    nn::Matrix<float> target_action;
};

WmBatch assemble(const std::vector<FinetuneSample>& samples, const std::vector<int>& order,
                 std::size_t begin, std::size_t end, int resolution) {
    const long n = static_cast<long>(end - begin);
    WmBatch b;
    b.images.resize(n, 3L * resolution * resolution);
    b.tokens.resize(static_cast<std::size_t>(n) * lang::kTokenLength);
    b.actions.resize(static_cast<std::size_t>(n));
    b.target_state.resize(n, 10);
    b.target_action = nn::Matrix<float>::Zero(n, env::kNumActions);
    for (long row = 0; row < n; ++row) {
        const FinetuneSample& s =
            samples[static_cast<std::size_t>(order[begin + static_cast<std::size_t>(row)])];
        data::render_chw(s.s0, resolution, b.images.row(row).data());
        for (int i = 0; i < lang::kTokenLength; ++i)
            b.tokens[static_cast<std::size_t>(row) * lang::kTokenLength + i] =
                s.tokens[static_cast<std::size_t>(i)];
        b.actions[static_cast<std::size_t>(row)] = s.action;
        for (int i = 0; i < 10; ++i) b.target_state(row, i) = static_cast<float>(s.target_state(i));
        b.target_action(row, s.target_action) = 1.0f;
    }
    return b;
}

}  // namespace

WorldModelNet train_worldmodel(const std::vector<FinetuneSample>& samples, int resolution,
                               const TrainWmConfig& cfg, std::vector<double>* epoch_losses) {
    if (samples.empty()) throw std::invalid_argument("train_worldmodel: no samples");
    WorldModelNet net(resolution, cfg.seed);
    if (cfg.epochs == 0) return net;
    auto params = net.params();
    nn::Adam<float> opt;
    Rng order_rng = Rng::derived(cfg.seed, {0x7A1ULL});
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = nn::cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t begin = 0; begin < samples.size();
             begin += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end =
                std::min(samples.size(), begin + static_cast<std::size_t>(cfg.batch));
            WmBatch b = assemble(samples, order, begin, end, resolution);
            nn::zero_grads(params);
            WorldModelNet::Output out = net.forward(b.images, b.tokens, b.actions);
            nn::Matrix<float> gs, ga;
            const float state_loss = nn::mse_loss(out.state, b.target_state, &gs);
            const float action_loss = nn::mse_loss(out.action_scores, b.target_action, &ga);
            net.backward(gs, ga);
            opt.step(params, lr);
            const double loss = static_cast<double>(state_loss) + action_loss;
            if (!std::isfinite(loss))
                throw std::runtime_error("train_worldmodel: non-finite loss at epoch " +
                                         std::to_string(epoch));
            loss_sum += loss;
            ++batches;
        }
        if (epoch_losses) epoch_losses->push_back(loss_sum / static_cast<double>(batches));
    }
    return net;
}

double state_mse(WorldModelNet& net, const std::vector<FinetuneSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("state_mse: no samples");
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    double total = 0.0;
    const int chunk = 256;
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        WmBatch b = assemble(samples, order, begin, end, net.resolution());
        WorldModelNet::Output out = net.forward(b.images, b.tokens, b.actions);
        total += static_cast<double>((out.state - b.target_state).squaredNorm());
    }
    return total / (10.0 * static_cast<double>(samples.size()));
}

data::Rollout generate_rollout(WorldModelNet& net, const Eigen::Matrix<double, 10, 1>& s0,
                               const lang::Instruction& instruction,
                               const GenerationConfig& cfg) {
    const env::StructuredGoalView view = instruction.goal.view();
    data::Rollout rollout;
    rollout.goal = instruction.goal;
    rollout.instruction = instruction;
    rollout.provenance = data::Provenance::imaginary;
    Eigen::Matrix<double, 10, 1> state = s0;
    int action = net.predict(state, instruction.tokens, kNullAction).action;  // seed a_0
    for (int t = 0; t < cfg.max_length; ++t) {
        const WorldModelNet::Prediction pred = net.predict(state, instruction.tokens, action);
        data::Step step;
        step.positions = state;
        step.action = action;
        step.reward = env::reward(env::BallState::from_flat(pred.positions), view);
        rollout.steps.push_back(step);
        state = pred.positions;
        if (cfg.stop_on_goal && env::goal_satisfied(env::BallState::from_flat(state), view)) break;
        action = pred.action;
    }
    rollout.final_positions = state;
    return rollout;
}

data::Rollout WmGenerator::generate(const Eigen::Matrix<double, 10, 1>& s0,
                                    const lang::Instruction& instruction) const {
    return generate_rollout(*net_, s0, instruction, cfg_);
}

data::Rollout OracleGenerator::generate(const Eigen::Matrix<double, 10, 1>& s0,
                                        const lang::Instruction& instruction) const {
    // Shake stream derived from (seed, s0 bits, tokens) so generation is a
    // pure function of its inputs.
    std::uint64_t h = derive_seed(seed_, {0x0AC1ULL});
    for (int i = 0; i < 10; ++i) h = derive_seed(h, {std::bit_cast<std::uint64_t>(s0(i))});
    for (int tok : instruction.tokens) h = derive_seed(h, {static_cast<std::uint64_t>(tok)});
    Rng shake(h);
    const env::StructuredGoalView view = instruction.goal.view();
    data::Rollout rollout;
    rollout.goal = instruction.goal;
    rollout.instruction = instruction;
    rollout.provenance = data::Provenance::imaginary;
    env::BallState state = env::BallState::from_flat(s0);
    for (int t = 0; t < cfg_.max_length; ++t) {
        const env::ActionIndex action = env::scripted_expert(state, view, shake);
        const env::BallState next = env::step(state, action);
        data::Step step;
        step.positions = state.flat();
        step.action = action.index;
        step.reward = env::reward(next, view);
        rollout.steps.push_back(step);
        state = next;
        if (cfg_.stop_on_goal && env::goal_satisfied(state, view)) break;
    }
    rollout.final_positions = state.flat();
    return rollout;
}

EditKind parse_edit_kind(const std::string& name) {
    if (name == "target") return EditKind::target;
    if (name == "behavior") return EditKind::behavior;
    if (name == "both") return EditKind::both;
    throw std::invalid_argument("unknown edit kind '" + name + "' (expected target|behavior|both)");
}

std::string edit_kind_name(EditKind kind) {
    switch (kind) {
        case EditKind::target: return "target";
        case EditKind::behavior: return "behavior";
        case EditKind::both: return "both";
    }
    throw std::invalid_argument("bad edit kind");
}

std::vector<lang::StructuredGoal> enumerate_edits(const lang::StructuredGoal& goal, EditKind kind) {
    std::vector<lang::StructuredGoal> edits;
    if (kind == EditKind::target) {
        for (int c = 0; c < env::kNumBalls; ++c) {
            if (c == goal.target || c == goal.reference) continue;
            lang::StructuredGoal e = goal;
            e.target = c;
            edits.push_back(e);
        }
    } else if (kind == EditKind::behavior) {
        for (int d = 0; d < 4; ++d) {
            if (d == static_cast<int>(goal.direction)) continue;
            lang::StructuredGoal e = goal;
            e.direction = static_cast<env::GoalDirection>(d);
            edits.push_back(e);
        }
    } else {
        for (int c = 0; c < env::kNumBalls; ++c) {
            if (c == goal.target || c == goal.reference) continue;
            for (int d = 0; d < 4; ++d) {
                if (d == static_cast<int>(goal.direction)) continue;
                lang::StructuredGoal e = goal;
                e.target = c;
                e.direction = static_cast<env::GoalDirection>(d);
                edits.push_back(e);
            }
        }
    }
    return edits;
}

data::Dataset counterfactual_generate(const metrics::RolloutGenerator& generator,
                                      const data::Dataset& source, EditKind kind, int per_goal,
                                      std::uint64_t seed) {
    if (per_goal < 1) throw std::invalid_argument("counterfactual_generate: per_goal must be >= 1");
    if (source.rollouts.empty())
        throw std::invalid_argument("counterfactual_generate: empty source dataset");
    const std::vector<lang::StructuredGoal> source_goals = source.distinct_goals();
    const auto is_source = [&](const lang::StructuredGoal& g) {
        return std::find(source_goals.begin(), source_goals.end(), g) != source_goals.end();
    };
    struct Edited {
        lang::StructuredGoal goal;
        lang::StructuredGoal from;
    };
    std::vector<Edited> edited;
    for (const lang::StructuredGoal& g : source_goals) {
        for (const lang::StructuredGoal& e : enumerate_edits(g, kind)) {
            if (is_source(e)) continue;
            const bool seen = std::any_of(edited.begin(), edited.end(),
                                          [&](const Edited& x) { return x.goal == e; });
            if (!seen) edited.push_back({e, g});
        }
    }
    Rng rng = Rng::derived(seed, {0xCF0ULL, static_cast<std::uint64_t>(kind)});
    data::Dataset out;
    out.manifest = source.manifest;
    out.rollouts.reserve(edited.size() * static_cast<std::size_t>(per_goal));
    for (const Edited& entry : edited) {
        const std::vector<int> pool = source.rollouts_for_goal(entry.from);
        for (int j = 0; j < per_goal; ++j) {
            const data::Rollout& src =
                source.rollouts[static_cast<std::size_t>(pool[rng.index(static_cast<int>(pool.size()))])];
            const lang::Instruction ins =
                lang::realize(entry.goal, j % lang::kTrainTemplates, "train");
            out.rollouts.push_back(generator.generate(src.steps.front().positions, ins));
        }
    }
    return out;
}

}  // namespace vlgor::wm
