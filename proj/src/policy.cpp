#include "vlgor/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace vlgor::policy {

GoalConditionedNet::GoalConditionedNet(int resolution, std::uint64_t seed)
    : resolution_(resolution),
      vis_features_([resolution] {
          const int c1 = (resolution - 4) / 2 + 1;
          const int c2 = (c1 - 4) / 2 + 1;
          if (c2 < 1) throw std::invalid_argument("resolution too small for the vision encoder");
          return 16 * c2 * c2;
      }()),
      init_rng_(Rng::derived(seed, {0x501ULL})),
      conv1_(3, 8, 4, 2, init_rng_),
      conv2_(8, 16, 4, 2, init_rng_),
      vis_fc_(vis_features_, 128, init_rng_),
      embed_(lang::Vocabulary::builtin().size(), 64, init_rng_),
      txt_fc1_(64, 64, init_rng_),
      txt_fc2_(64, 64, init_rng_),
      fuse_(128 + 64, 128, init_rng_),
      // The head also sees the pooled word embeddings directly, so unseen
      // word combinations decode through the linear path instead of relying
      // on the fused features alone.
      head_(128 + 64, env::kNumActions, init_rng_) {
    // Zero head: uniform logits (and flat Q) at the start of training.
    std::vector<nn::ParamView<float>> head_params;
    head_.collect("head", head_params);
    for (auto& p : head_params) std::fill(p.value, p.value + p.size, 0.0f);
}

nn::Matrix<float> GoalConditionedNet::forward(const nn::Matrix<float>& images,
                                              const std::vector<int>& tokens) {
    const long batch = images.rows();
    const int c1 = conv1_.out_spatial(resolution_);
    nn::Matrix<float> v = relu1_.forward(conv1_.forward(images, resolution_, resolution_));
    v = relu2_.forward(conv2_.forward(v, c1, c1));
    v = vis_fc_.forward(v);

    const nn::Matrix<float> pooled = pool_.forward(
        embed_.forward(tokens, static_cast<int>(batch), lang::kTokenLength),
        lang::kTokenLength, 64);
    nn::Matrix<float> txt = txt_fc2_.forward(txt_relu_.forward(txt_fc1_.forward(pooled)));

    nn::Matrix<float> fused(batch, v.cols() + txt.cols());
    fused << v, txt;
    const nn::Matrix<float> h = fuse_relu_.forward(fuse_.forward(fused));
    nn::Matrix<float> hp(batch, h.cols() + pooled.cols());
    hp << h, pooled;
    return head_.forward(hp);
}

void GoalConditionedNet::backward(const nn::Matrix<float>& glogits) {
    const nn::Matrix<float> ghp = head_.backward(glogits);
    const nn::Matrix<float> gfused =
        fuse_.backward(fuse_relu_.backward(nn::Matrix<float>(ghp.leftCols(128))));
    const nn::Matrix<float> gv = gfused.leftCols(128);
    const nn::Matrix<float> gtxt = gfused.rightCols(64);
    nn::Matrix<float> gpool =
        txt_fc1_.backward(txt_relu_.backward(txt_fc2_.backward(gtxt)));
    gpool += ghp.rightCols(64);
    embed_.backward(pool_.backward(gpool));
    nn::Matrix<float> gconv = conv2_.backward(relu2_.backward(vis_fc_.backward(gv)));
    conv1_.backward(relu1_.backward(gconv));
}

Eigen::Matrix<float, env::kNumActions, 1> GoalConditionedNet::scores(
    const Eigen::Matrix<double, 10, 1>& positions, const std::vector<int>& tokens) {
    nn::Matrix<float> image(1, 3L * resolution_ * resolution_);
    data::render_chw(positions, resolution_, image.row(0).data());
    std::vector<int> padded(tokens);
    padded.resize(lang::kTokenLength, lang::Vocabulary::kPad);
    const nn::Matrix<float> out = forward(image, padded);
    Eigen::Matrix<float, env::kNumActions, 1> q;
    for (int a = 0; a < env::kNumActions; ++a) q(a) = out(0, a);
    return q;
}

std::vector<nn::ParamView<float>> GoalConditionedNet::params() {
    std::vector<nn::ParamView<float>> out;
    conv1_.collect("vision.conv1", out);
    conv2_.collect("vision.conv2", out);
    vis_fc_.collect("vision.fc", out);
    embed_.collect("text.embed", out);
    txt_fc1_.collect("text.fc1", out);
    txt_fc2_.collect("text.fc2", out);
    fuse_.collect("fusion.fc", out);
    head_.collect("head.q", out);
    return out;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& logs,
                     const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
    out << "epoch, loss, conservative_gap, mean_q, lr\n";
    out.precision(17);
    for (const EpochLog& l : logs) {
        out << l.epoch << ", " << l.loss << ", " << l.conservative_gap << ", " << l.mean_q << ", "
            << l.lr << "\n";
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

namespace {

int steps_per_epoch(const data::Dataset& real, int batch) {
    const std::size_t n = real.transition_count();
    return std::max(1, static_cast<int>((n + static_cast<std::size_t>(batch) - 1) /
                                        static_cast<std::size_t>(batch)));
}

}  // namespace

TrainResult train_bc(const data::Dataset& real, const data::Dataset* imaginary,
                     const data::MixedBatchSampler& sampler, const TrainConfig& cfg) {
    if (real.rollouts.empty()) throw std::invalid_argument("train_bc: empty real dataset");
    const std::vector<data::TransitionRef> real_refs = data::flatten_transitions(real);
    std::vector<data::TransitionRef> imag_refs;
    if (imaginary) imag_refs = data::flatten_transitions(*imaginary);
    TrainResult result{GoalConditionedNet(cfg.resolution, cfg.seed), {}, 0.0};
    auto params = result.net.params();
    nn::Adam<float> opt;
    Rng rng = Rng::derived(cfg.seed, {0xBC0ULL});
    const int steps = steps_per_epoch(real, sampler.batch);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = nn::cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        double loss_sum = 0.0;
        for (int s = 0; s < steps; ++s) {
            const data::Batch batch = data::sample_batch(real, real_refs, imaginary, imag_refs,
                                                         sampler, cfg.resolution, rng);
            nn::zero_grads(params);
            const nn::Matrix<float> logits = result.net.forward(batch.images, batch.tokens);
            nn::Matrix<float> glogits;
            const float loss = nn::softmax_cross_entropy(logits, batch.actions, &glogits);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_bc: non-finite loss at epoch " +
                                         std::to_string(epoch));
            result.net.backward(glogits);
            opt.step(params, lr);
            loss_sum += loss;
        }
        result.logs.push_back({epoch, loss_sum / steps, 0.0, 0.0, lr});
    }
    return result;
}

TrainResult train_cql(const data::Dataset& real, const data::Dataset* imaginary,
                      const data::MixedBatchSampler& sampler, const TrainConfig& cfg,
                      const CQLConfig& cql) {
    if (real.rollouts.empty()) throw std::invalid_argument("train_cql: empty real dataset");
    if (cql.alpha < 0.0) throw std::invalid_argument("train_cql: alpha must be >= 0");
    if (cql.gamma < 0.0 || cql.gamma >= 1.0)
        throw std::invalid_argument("train_cql: gamma must be in [0,1)");
    const std::vector<data::TransitionRef> real_refs = data::flatten_transitions(real);
    std::vector<data::TransitionRef> imag_refs;
    if (imaginary) imag_refs = data::flatten_transitions(*imaginary);
    TrainResult result{GoalConditionedNet(cfg.resolution, cfg.seed), {},
                       std::numeric_limits<double>::infinity()};
    GoalConditionedNet target = result.net;  // hard copy, synced periodically
    auto params = result.net.params();
    nn::Adam<float> opt;
    Rng rng = Rng::derived(cfg.seed, {0xCA1ULL});
    const int steps = steps_per_epoch(real, sampler.batch);
    long grad_steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = nn::cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        double bellman_sum = 0.0, gap_sum = 0.0, q_sum = 0.0;
        for (int s = 0; s < steps; ++s) {
            const data::Batch batch = data::sample_batch(real, real_refs, imaginary, imag_refs,
                                                         sampler, cfg.resolution, rng);
            const long b = batch.size;
            // Bellman targets from the frozen copy.
            const nn::Matrix<float> qnext = target.forward(batch.next_images, batch.tokens);
            nn::Vector<float> y(b);
            for (long r = 0; r < b; ++r) {
                const float bootstrap = (1.0f - batch.dones[static_cast<std::size_t>(r)]) *
                                        qnext.row(r).maxCoeff();
                y(r) = batch.rewards[static_cast<std::size_t>(r)] +
                       static_cast<float>(cql.gamma) * bootstrap;
            }
            nn::zero_grads(params);
            const nn::Matrix<float> q = result.net.forward(batch.images, batch.tokens);
            const nn::Vector<float> lse = nn::logsumexp_rows(q);
            nn::Matrix<float> gq = nn::Matrix<float>::Zero(b, env::kNumActions);
            double bellman = 0.0, gap_mean = 0.0, q_mean = 0.0;
            const nn::Matrix<float> soft = nn::softmax_rows(q);
            for (long r = 0; r < b; ++r) {
                const int a = batch.actions[static_cast<std::size_t>(r)];
                const float qa = q(r, a);
                const float delta = qa - y(r);
                bellman += static_cast<double>(delta) * delta;
                gq(r, a) += 2.0f * delta / static_cast<float>(b);
                const double gap = static_cast<double>(lse(r)) - qa;
                result.min_conservative_gap = std::min(result.min_conservative_gap, gap);
                gap_mean += gap;
                q_mean += qa;
                if (cql.alpha > 0.0) {
                    const float scale = static_cast<float>(cql.alpha) / static_cast<float>(b);
                    gq.row(r) += scale * soft.row(r);
                    gq(r, a) -= scale;
                }
            }
            bellman /= static_cast<double>(b);
            gap_mean /= static_cast<double>(b);
            q_mean /= static_cast<double>(b);
            if (!std::isfinite(bellman) || !std::isfinite(gap_mean))
                throw std::runtime_error("train_cql: non-finite loss at epoch " +
                                         std::to_string(epoch));
            result.net.backward(gq);
            opt.step(params, lr);
            ++grad_steps;
            if (grad_steps % cql.target_sync_interval == 0) target = result.net;
            bellman_sum += bellman;
            gap_sum += gap_mean;
            q_sum += q_mean;
        }
        result.logs.push_back({epoch, bellman_sum / steps, gap_sum / steps, q_sum / steps, lr});
    }
    return result;
}

env::ActionIndex act_greedy(GoalConditionedNet& net, const env::BallState& state,
                            const lang::Instruction& instruction) {
    const auto q = net.scores(state.flat(), instruction.tokens);
    int best = 0;
    for (int a = 1; a < env::kNumActions; ++a) {
        if (q(a) > q(best)) best = a;  // strict: ties keep the lowest index
    }
    return env::ActionIndex{best};
}

double mean_offdata_q(GoalConditionedNet& net, const data::Dataset& dataset, int n_samples,
                      std::uint64_t seed) {
    if (n_samples <= 0) throw std::invalid_argument("mean_offdata_q: n_samples must be > 0");
    const std::vector<data::TransitionRef> refs = data::flatten_transitions(dataset);
    if (refs.empty()) throw std::invalid_argument("mean_offdata_q: empty dataset");
    Rng rng = Rng::derived(seed, {0x0DDULL});
    double total = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const data::TransitionRef ref = refs[rng.uniform_int(refs.size())];
        const data::Rollout& rollout = dataset.rollouts[static_cast<std::size_t>(ref.rollout)];
        const data::Step& step = rollout.steps[static_cast<std::size_t>(ref.t)];
        int action = static_cast<int>(rng.uniform_int(env::kNumActions - 1));
        if (action >= step.action) ++action;  // uniform over the 39 non-dataset actions
        const auto q = net.scores(step.positions, rollout.instruction.tokens);
        total += static_cast<double>(q(action));
    }
    return total / static_cast<double>(n_samples);
}

double evaluate(const Actor& actor, const std::vector<lang::Instruction>& instructions,
                int episodes_per_goal, int horizon, std::uint64_t seed) {
    if (instructions.empty()) throw std::invalid_argument("evaluate: no instructions");
    if (episodes_per_goal <= 0) throw std::invalid_argument("evaluate: episodes must be > 0");
    if (horizon <= 0) throw std::invalid_argument("evaluate: horizon must be > 0");
    long successes = 0;
    long total = 0;
    for (std::size_t i = 0; i < instructions.size(); ++i) {
        const lang::Instruction& ins = instructions[i];
        const env::StructuredGoalView view = ins.goal.view();
        for (int e = 0; e < episodes_per_goal; ++e) {
            env::BallState state = data::reset_unsatisfied(
                seed, {0xEF0ULL, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(e)},
                view);
            bool success = false;
            for (int t = 0; t < horizon; ++t) {
                const int a = actor(state, ins);
                state = env::step(state, env::ActionIndex{a});
                if (env::goal_satisfied(state, view)) {
                    success = true;
                    break;
                }
            }
            successes += success ? 1 : 0;
            ++total;
        }
    }
    return 100.0 * static_cast<double>(successes) / static_cast<double>(total);
}

double evaluate(GoalConditionedNet& net, const std::vector<lang::Instruction>& instructions,
                int episodes_per_goal, int horizon, std::uint64_t seed) {
    return evaluate(
        [&net](const env::BallState& state, const lang::Instruction& ins) {
            return act_greedy(net, state, ins).index;
        },
        instructions, episodes_per_goal, horizon, seed);
}

}  // namespace vlgor::policy
