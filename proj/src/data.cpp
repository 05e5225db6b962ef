#include "vlgor/data.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vlgor/serialize.hpp"

namespace vlgor::data {

using nlohmann::json;

const Eigen::Matrix<double, 10, 1>& Rollout::state_after(int t) const {
    if (t < 0 || t > length()) throw std::out_of_range("state_after: t out of range");
    if (t == length()) return final_positions;
    return steps[static_cast<std::size_t>(t)].positions;
}

std::vector<int> Dataset::rollouts_for_goal(const lang::StructuredGoal& goal) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(rollouts.size()); ++i) {
        if (rollouts[static_cast<std::size_t>(i)].goal == goal) out.push_back(i);
    }
    return out;
}

std::vector<lang::StructuredGoal> Dataset::distinct_goals() const {
    std::vector<lang::StructuredGoal> out;
    for (const Rollout& r : rollouts) {
        if (std::find(out.begin(), out.end(), r.goal) == out.end()) out.push_back(r.goal);
    }
    return out;
}

std::size_t Dataset::transition_count() const {
    std::size_t n = 0;
    for (const Rollout& r : rollouts) n += r.steps.size();
    return n;
}

env::BallState reset_unsatisfied(std::uint64_t seed, std::initializer_list<std::uint64_t> path,
                                 const env::StructuredGoalView& goal) {
    const std::uint64_t base = derive_seed(seed, path);
    for (std::uint64_t attempt = 0;; ++attempt) {
        const env::BallState s = env::reset(derive_seed(base, {attempt}));
        if (!env::goal_satisfied(s, goal)) return s;
    }
}

Rollout expert_rollout(const lang::StructuredGoal& goal, const lang::Instruction& instruction,
                       const env::BallState& start, Rng& shake_rng, int horizon) {
    const env::StructuredGoalView view = goal.view();
    env::BallState state = start;
    Rollout rollout;
    rollout.goal = goal;
    rollout.instruction = instruction;
    rollout.provenance = Provenance::real;
    for (int t = 0; t < horizon; ++t) {
        const env::ActionIndex action = env::scripted_expert(state, view, shake_rng);
        const env::BallState next = env::step(state, action);
        Step step;
        step.positions = state.flat();
        step.action = action.index;
        step.reward = env::reward(next, view);
        rollout.steps.push_back(step);
        state = next;
        if (env::goal_satisfied(state, view)) break;
    }
    rollout.final_positions = state.flat();
    return rollout;
}

Dataset collect_expert_dataset(const std::vector<lang::StructuredGoal>& goals,
                               int episodes_per_goal, std::uint64_t seed,
                               const std::string& config_hash) {
    if (goals.empty()) throw std::invalid_argument("collect: empty goal list");
    if (episodes_per_goal <= 0) throw std::invalid_argument("collect: episodes_per_goal must be > 0");
    Dataset ds;
    ds.manifest.seed = seed;
    ds.manifest.config_hash = config_hash;
    ds.manifest.vocabulary = lang::Vocabulary::builtin().words();
    ds.rollouts.reserve(goals.size() * static_cast<std::size_t>(episodes_per_goal));
    for (std::size_t g = 0; g < goals.size(); ++g) {
        for (int e = 0; e < episodes_per_goal; ++e) {
            const lang::Instruction ins =
                lang::realize(goals[g], e % lang::kTrainTemplates, "train");
            const env::BallState start = reset_unsatisfied(
                seed, {0xD5ULL, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(e)},
                goals[g].view());
            Rng shake = Rng::derived(
                seed, {0xE1ULL, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(e)});
            ds.rollouts.push_back(expert_rollout(goals[g], ins, start, shake));
        }
    }
    return ds;
}

json goal_to_json(const lang::StructuredGoal& g) {
    json j;
    j["family"] = g.family == lang::Family::absolute ? "absolute" : "relative";
    j["target"] = g.target;
    j["direction"] = lang::goal_direction_name(g.direction);
    j["reference"] = g.reference;
    return j;
}

lang::StructuredGoal goal_from_json(const json& j) {
    lang::StructuredGoal g;
    const std::string family = j.at("family").get<std::string>();
    if (family == "absolute") {
        g.family = lang::Family::absolute;
    } else if (family == "relative") {
        g.family = lang::Family::relative;
    } else {
        throw std::runtime_error("unknown goal family '" + family + "'");
    }
    g.target = j.at("target").get<int>();
    g.direction = lang::parse_goal_direction(j.at("direction").get<std::string>());
    g.reference = j.at("reference").get<int>();
    return g;
}

json instruction_to_json(const lang::Instruction& ins) {
    json j;
    j["goal"] = goal_to_json(ins.goal);
    j["template_id"] = ins.template_id;
    j["surface"] = ins.surface;
    j["tokens"] = ins.tokens;
    j["tier_tag"] = ins.tier_tag;
    return j;
}

lang::Instruction instruction_from_json(const json& j) {
    lang::Instruction ins;
    ins.goal = goal_from_json(j.at("goal"));
    ins.template_id = j.at("template_id").get<int>();
    ins.surface = j.at("surface").get<std::string>();
    ins.tokens = j.at("tokens").get<std::vector<int>>();
    ins.tier_tag = j.at("tier_tag").get<std::string>();
    return ins;
}

namespace {

json rollout_to_json(const Rollout& r) {
    json j;
    j["goal"] = goal_to_json(r.goal);
    j["instruction"] = {{"template_id", r.instruction.template_id},
                        {"surface", r.instruction.surface},
                        {"tokens", r.instruction.tokens},
                        {"tier_tag", r.instruction.tier_tag}};
    j["provenance"] = r.provenance == Provenance::real ? "real" : "imaginary";
    json steps = json::array();
    for (const Step& s : r.steps) {
        std::vector<double> p(s.positions.data(), s.positions.data() + 10);
        steps.push_back({{"p", p}, {"a", s.action}, {"r", s.reward}});
    }
    j["steps"] = std::move(steps);
    j["final"] = std::vector<double>(r.final_positions.data(), r.final_positions.data() + 10);
    return j;
}

Eigen::Matrix<double, 10, 1> positions_from_json(const json& j) {
    if (!j.is_array() || j.size() != 10) throw std::runtime_error("positions must have 10 entries");
    Eigen::Matrix<double, 10, 1> p;
    for (int i = 0; i < 10; ++i) p(i) = j[static_cast<std::size_t>(i)].get<double>();
    return p;
}

Rollout rollout_from_json(const json& j) {
    Rollout r;
    r.goal = goal_from_json(j.at("goal"));
    const json& ins = j.at("instruction");
    r.instruction.goal = r.goal;
    r.instruction.template_id = ins.at("template_id").get<int>();
    r.instruction.surface = ins.at("surface").get<std::string>();
    r.instruction.tokens = ins.at("tokens").get<std::vector<int>>();
    r.instruction.tier_tag = ins.at("tier_tag").get<std::string>();
    const std::string prov = j.at("provenance").get<std::string>();
    if (prov == "real") {
        r.provenance = Provenance::real;
    } else if (prov == "imaginary") {
        r.provenance = Provenance::imaginary;
    } else {
        throw std::runtime_error("unknown provenance '" + prov + "'");
    }
    for (const json& sj : j.at("steps")) {
        Step s;
        s.positions = positions_from_json(sj.at("p"));
        s.action = sj.at("a").get<int>();
        s.reward = sj.at("r").get<double>();
        r.steps.push_back(s);
    }
    if (r.steps.empty()) throw std::runtime_error("rollout has no steps");
    r.final_positions = positions_from_json(j.at("final"));
    return r;
}

}  // namespace

void save(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    json manifest;
    manifest["format"] = dataset.manifest.format;
    manifest["seed"] = dataset.manifest.seed;
    manifest["config_hash"] = dataset.manifest.config_hash;
    manifest["vocabulary"] = dataset.manifest.vocabulary;
    manifest["rollouts"] = dataset.rollouts.size();
    out << manifest.dump() << "\n";
    for (const Rollout& r : dataset.rollouts) out << rollout_to_json(r).dump() << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

Dataset load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": line 1: missing manifest");
    Dataset ds;
    std::size_t expected = 0;
    try {
        const json manifest = json::parse(line);
        ds.manifest.format = manifest.at("format").get<std::string>();
        if (ds.manifest.format != kDatasetFormat)
            throw std::runtime_error("unsupported format '" + ds.manifest.format + "'");
        ds.manifest.seed = manifest.at("seed").get<std::uint64_t>();
        ds.manifest.config_hash = manifest.at("config_hash").get<std::string>();
        ds.manifest.vocabulary = manifest.at("vocabulary").get<std::vector<std::string>>();
        expected = manifest.at("rollouts").get<std::size_t>();
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": line 1: " + e.what());
    }
    if (ds.manifest.vocabulary != lang::Vocabulary::builtin().words())
        throw std::runtime_error(path + ": vocabulary mismatch with this build");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            ds.rollouts.push_back(rollout_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (ds.rollouts.size() != expected)
        throw std::runtime_error(path + ": line " + std::to_string(line_no + 1) + ": expected " +
                                 std::to_string(expected) + " rollouts, found " +
                                 std::to_string(ds.rollouts.size()));
    return ds;
}

Rollout label_rewards(const Rollout& rollout, const lang::StructuredGoal& goal) {
    const env::StructuredGoalView view = goal.view();
    Rollout out = rollout;
    for (int t = 0; t < out.length(); ++t) {
        const env::BallState post = env::BallState::from_flat(out.state_after(t + 1));
        out.steps[static_cast<std::size_t>(t)].reward = env::reward(post, view);
    }
    return out;
}

int MixedBatchSampler::real_per_batch() const {
    if (ratio <= 0.0 || ratio > 1.0) throw std::invalid_argument("sampler ratio must be in (0,1]");
    if (batch <= 0) throw std::invalid_argument("sampler batch must be positive");
    return static_cast<int>(std::lround(ratio * batch));
}

std::vector<TransitionRef> flatten_transitions(const Dataset& dataset) {
    std::vector<TransitionRef> refs;
    refs.reserve(dataset.transition_count());
    for (int r = 0; r < static_cast<int>(dataset.rollouts.size()); ++r) {
        const int len = dataset.rollouts[static_cast<std::size_t>(r)].length();
        for (int t = 0; t < len; ++t) refs.push_back({r, t});
    }
    return refs;
}

void render_chw(const Eigen::Matrix<double, 10, 1>& positions, int resolution, float* dest) {
    const env::Image img = env::render(env::BallState::from_flat(positions), resolution);
    const int plane = resolution * resolution;
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            for (int c = 0; c < 3; ++c) dest[c * plane + y * resolution + x] = img.at(y, x, c);
        }
    }
}

namespace {

void fill_batch_row(Batch& batch, int row, const Dataset& ds, const TransitionRef& ref) {
    const Rollout& rollout = ds.rollouts[static_cast<std::size_t>(ref.rollout)];
    const Step& step = rollout.steps[static_cast<std::size_t>(ref.t)];
    render_chw(step.positions, batch.resolution, batch.images.row(row).data());
    render_chw(rollout.state_after(ref.t + 1), batch.resolution, batch.next_images.row(row).data());
    const auto& tok = rollout.instruction.tokens;
    for (int i = 0; i < lang::kTokenLength; ++i)
        batch.tokens[static_cast<std::size_t>(row) * lang::kTokenLength + i] =
            i < static_cast<int>(tok.size()) ? tok[static_cast<std::size_t>(i)]
                                             : lang::Vocabulary::kPad;
    batch.actions[static_cast<std::size_t>(row)] = step.action;
    batch.rewards[static_cast<std::size_t>(row)] = static_cast<float>(step.reward);
    batch.dones[static_cast<std::size_t>(row)] = (ref.t + 1 == rollout.length()) ? 1.0f : 0.0f;
}

}  // namespace

Batch sample_batch(const Dataset& real, const std::vector<TransitionRef>& real_refs,
                   const Dataset* imaginary, const std::vector<TransitionRef>& imaginary_refs,
                   const MixedBatchSampler& sampler, int resolution, Rng& rng) {
    const int n_real = sampler.real_per_batch();
    const int n_imag = sampler.batch - n_real;
    if (real_refs.empty()) throw std::invalid_argument("sample_batch: empty real pool");
    if (n_imag > 0 && (imaginary == nullptr || imaginary_refs.empty()))
        throw std::invalid_argument("sample_batch: ratio < 1 requires a nonempty imaginary pool");
    Batch batch;
    batch.size = sampler.batch;
    batch.resolution = resolution;
    const long pixels = 3L * resolution * resolution;
    batch.images.resize(sampler.batch, pixels);
    batch.next_images.resize(sampler.batch, pixels);
    batch.tokens.assign(static_cast<std::size_t>(sampler.batch) * lang::kTokenLength, 0);
    batch.actions.assign(static_cast<std::size_t>(sampler.batch), 0);
    batch.rewards.assign(static_cast<std::size_t>(sampler.batch), 0.0f);
    batch.dones.assign(static_cast<std::size_t>(sampler.batch), 0.0f);
    for (int row = 0; row < n_real; ++row) {
        const auto& ref = real_refs[rng.uniform_int(real_refs.size())];
        fill_batch_row(batch, row, real, ref);
    }
    for (int row = n_real; row < sampler.batch; ++row) {
        const auto& ref = imaginary_refs[rng.uniform_int(imaginary_refs.size())];
        fill_batch_row(batch, row, *imaginary, ref);
    }
    return batch;
}

Dataset merge(const std::vector<Dataset>& parts) {
    if (parts.empty()) throw std::invalid_argument("merge: no datasets");
    Dataset out;
    out.manifest = parts.front().manifest;
    for (const Dataset& p : parts)
        out.rollouts.insert(out.rollouts.end(), p.rollouts.begin(), p.rollouts.end());
    return out;
}

}  // namespace vlgor::data
