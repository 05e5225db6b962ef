#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "vlgor/data.hpp"
#include "vlgor/env.hpp"
#include "vlgor/lang.hpp"
#include "vlgor/rng.hpp"

using namespace vlgor;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<lang::StructuredGoal> first_goals(std::size_t n) {
    std::vector<lang::StructuredGoal> all = lang::enumerate_goals();
    all.resize(n);
    return all;
}

// A fully synthetic dataset with hand-planted actions (no dynamics): useful
// for sampler accounting where only field plumbing matters.
data::Dataset synthetic_dataset(int rollouts, int steps_per_rollout, int action) {
    data::Dataset ds;
    ds.manifest.vocabulary = lang::Vocabulary::builtin().words();
    const env::BallState base = env::reset(11);
    for (int r = 0; r < rollouts; ++r) {
        data::Rollout rollout;
        rollout.goal = lang::enumerate_goals()[static_cast<std::size_t>(r) % 100];
        rollout.instruction = lang::realize(rollout.goal, 0);
        for (int t = 0; t < steps_per_rollout; ++t) {
            data::Step s;
            s.positions = base.flat();
            s.action = action;
            s.reward = 0.0;
            rollout.steps.push_back(s);
        }
        rollout.final_positions = base.flat();
        ds.rollouts.push_back(rollout);
    }
    return ds;
}

}  // namespace

TEST_CASE("collection produces episodes_per_goal rollouts per goal") {
    const std::vector<lang::StructuredGoal> goals = first_goals(10);
    const data::Dataset ds = data::collect_expert_dataset(goals, 5, 42);
    CHECK(ds.rollouts.size() == 50);
    CHECK(ds.manifest.format == std::string(data::kDatasetFormat));
    CHECK(ds.manifest.seed == 42);
    CHECK(ds.manifest.vocabulary == lang::Vocabulary::builtin().words());
    for (const lang::StructuredGoal& g : goals) CHECK(ds.rollouts_for_goal(g).size() == 5);
    CHECK(ds.distinct_goals().size() == 10);

    for (const data::Rollout& r : ds.rollouts) {
        CHECK(r.provenance == data::Provenance::real);
        REQUIRE(r.length() >= 1);
        CHECK(r.length() <= data::kHorizon);
        // The expert finishes every episode, so the last step is rewarded.
        CHECK(r.steps.back().reward == 1.0);
        CHECK(r.instruction.template_id < lang::kTrainTemplates);
        CHECK(r.instruction.goal == r.goal);
    }
    CHECK_THROWS(data::collect_expert_dataset({}, 5, 42));
    CHECK_THROWS(data::collect_expert_dataset(goals, 0, 42));
}

TEST_CASE("collection is deterministic in the seed") {
    const std::vector<lang::StructuredGoal> goals = first_goals(3);
    const data::Dataset a = data::collect_expert_dataset(goals, 2, 7);
    const data::Dataset b = data::collect_expert_dataset(goals, 2, 7);
    REQUIRE(a.rollouts.size() == b.rollouts.size());
    for (std::size_t i = 0; i < a.rollouts.size(); ++i) {
        REQUIRE(a.rollouts[i].length() == b.rollouts[i].length());
        for (int t = 0; t < a.rollouts[i].length(); ++t) {
            CHECK(a.rollouts[i].steps[static_cast<std::size_t>(t)].positions ==
                  b.rollouts[i].steps[static_cast<std::size_t>(t)].positions);
            CHECK(a.rollouts[i].steps[static_cast<std::size_t>(t)].action ==
                  b.rollouts[i].steps[static_cast<std::size_t>(t)].action);
        }
    }
    const data::Dataset c = data::collect_expert_dataset(goals, 2, 8);
    bool any_difference = false;
    for (std::size_t i = 0; i < c.rollouts.size() && !any_difference; ++i)
        any_difference = c.rollouts[i].steps[0].positions != a.rollouts[i].steps[0].positions;
    CHECK(any_difference);
}

TEST_CASE("stored rollouts replay exactly under the simulator") {
    const data::Dataset ds = data::collect_expert_dataset(first_goals(5), 2, 3);
    for (const data::Rollout& r : ds.rollouts) {
        env::BallState state = env::BallState::from_flat(r.steps[0].positions);
        for (int t = 0; t < r.length(); ++t) {
            CHECK(state.flat() == r.state_after(t));
            CHECK(state.flat() == r.steps[static_cast<std::size_t>(t)].positions);
            state = env::step(state, env::ActionIndex{r.steps[static_cast<std::size_t>(t)].action});
        }
        CHECK(state.flat() == r.final_positions);
        CHECK(state.flat() == r.state_after(r.length()));
        CHECK_THROWS(r.state_after(r.length() + 1));
        CHECK_THROWS(r.state_after(-1));
    }
}

TEST_CASE("save and load round trip every field bit-exactly") {
    data::Dataset ds = data::collect_expert_dataset(first_goals(4), 2, 99, "cafebabe12345678");
    const auto path = temp_file("vlgor_roundtrip.vlgor.jsonl");
    data::save(ds, path.string());
    const data::Dataset back = data::load(path.string());

    CHECK(back.manifest.format == ds.manifest.format);
    CHECK(back.manifest.seed == ds.manifest.seed);
    CHECK(back.manifest.config_hash == ds.manifest.config_hash);
    CHECK(back.manifest.vocabulary == ds.manifest.vocabulary);
    REQUIRE(back.rollouts.size() == ds.rollouts.size());
    for (std::size_t i = 0; i < ds.rollouts.size(); ++i) {
        const data::Rollout& a = ds.rollouts[i];
        const data::Rollout& b = back.rollouts[i];
        CHECK(a.goal == b.goal);
        CHECK(a.instruction.surface == b.instruction.surface);
        CHECK(a.instruction.template_id == b.instruction.template_id);
        CHECK(a.instruction.tokens == b.instruction.tokens);
        CHECK(a.instruction.tier_tag == b.instruction.tier_tag);
        CHECK(a.provenance == b.provenance);
        REQUIRE(a.length() == b.length());
        for (int t = 0; t < a.length(); ++t) {
            const auto& sa = a.steps[static_cast<std::size_t>(t)];
            const auto& sb = b.steps[static_cast<std::size_t>(t)];
            CHECK(sa.positions == sb.positions);  // bit-exact through the decimal encoding
            CHECK(sa.action == sb.action);
            CHECK(sa.reward == sb.reward);
        }
        CHECK(a.final_positions == b.final_positions);
    }
    std::filesystem::remove(path);
}

TEST_CASE("load reports malformed and truncated files by line") {
    data::Dataset ds = data::collect_expert_dataset(first_goals(3), 1, 5);
    const auto path = temp_file("vlgor_truncated.vlgor.jsonl");
    data::save(ds, path.string());

    // Corrupt line 3 (second rollout).
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    in.close();
    REQUIRE(lines.size() == 4);
    {
        std::ofstream out(path, std::ios::trunc);
        out << lines[0] << "\n" << lines[1] << "\n"
            << lines[2].substr(0, lines[2].size() / 2) << "\n";
    }
    CHECK_THROWS_WITH_AS(data::load(path.string()),
                         doctest::Contains("line 3"), std::runtime_error);

    // Drop a whole rollout line: the manifest count no longer matches.
    {
        std::ofstream out(path, std::ios::trunc);
        out << lines[0] << "\n" << lines[1] << "\n";
    }
    CHECK_THROWS_WITH_AS(data::load(path.string()),
                         doctest::Contains("expected 3 rollouts"), std::runtime_error);

    // Vocabulary mismatch: swap two words in the stored manifest.
    {
        std::string manifest = lines[0];
        const auto pos = manifest.find("\"green\"");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 7, "\"grean\"");
        std::ofstream out(path, std::ios::trunc);
        out << manifest << "\n" << lines[1] << "\n" << lines[2] << "\n" << lines[3] << "\n";
    }
    CHECK_THROWS_WITH_AS(data::load(path.string()),
                         doctest::Contains("vocabulary mismatch"), std::runtime_error);

    std::filesystem::remove(path);
}

TEST_CASE("empty datasets persist as a single manifest line") {
    data::Dataset ds;
    ds.manifest.seed = 1;
    ds.manifest.vocabulary = lang::Vocabulary::builtin().words();
    const auto path = temp_file("vlgor_empty.vlgor.jsonl");
    data::save(ds, path.string());
    std::ifstream in(path);
    std::string line;
    int count = 0;
    while (std::getline(in, line)) ++count;
    CHECK(count == 1);
    const data::Dataset back = data::load(path.string());
    CHECK(back.rollouts.empty());
    CHECK(back.manifest.seed == 1);
    std::filesystem::remove(path);
}

TEST_CASE("reward labeling recomputes from positions and is idempotent") {
    const data::Dataset ds = data::collect_expert_dataset(first_goals(3), 1, 21);
    for (const data::Rollout& r : ds.rollouts) {
        const data::Rollout relabeled = data::label_rewards(r, r.goal);
        REQUIRE(relabeled.length() == r.length());
        for (int t = 0; t < r.length(); ++t)
            CHECK(relabeled.steps[static_cast<std::size_t>(t)].reward ==
                  r.steps[static_cast<std::size_t>(t)].reward);
        CHECK(relabeled.goal == r.goal);
        CHECK(relabeled.provenance == r.provenance);
    }

    // A synthetic rollout that never enters the goal region: all rewards 0.
    data::Rollout idle = synthetic_dataset(1, 4, 0).rollouts[0];
    idle.goal = {lang::Family::absolute, 0, env::GoalDirection::East, -1};
    env::BallState base = env::reset(11);
    base.positions[0] = {0.30, 0.50};
    for (auto& s : idle.steps) {
        s.positions = base.flat();
        s.reward = 0.75;  // garbage to be overwritten
    }
    idle.final_positions = base.flat();
    const data::Rollout cleared = data::label_rewards(idle, idle.goal);
    for (const auto& s : cleared.steps) CHECK(s.reward == 0.0);

    // Plant a satisfying final state: only the final step flips to 1.
    base.positions[0] = {0.80, 0.50};
    idle.final_positions = base.flat();
    const data::Rollout satisfied = data::label_rewards(idle, idle.goal);
    CHECK(satisfied.steps.back().reward == 1.0);
    for (int t = 0; t + 1 < satisfied.length(); ++t)
        CHECK(satisfied.steps[static_cast<std::size_t>(t)].reward == 0.0);
}

TEST_CASE("sampler emits the exact real/imaginary split") {
    CHECK(data::MixedBatchSampler{0.5, 128}.real_per_batch() == 64);
    CHECK(data::MixedBatchSampler{1.0, 128}.real_per_batch() == 128);
    CHECK(data::MixedBatchSampler{0.9, 10}.real_per_batch() == 9);
    CHECK(data::MixedBatchSampler{0.25, 10}.real_per_batch() == 3);  // round, not floor
    CHECK_THROWS(data::MixedBatchSampler{0.0, 128}.real_per_batch());
    CHECK_THROWS(data::MixedBatchSampler{1.5, 128}.real_per_batch());
    CHECK_THROWS(data::MixedBatchSampler{0.5, 0}.real_per_batch());

    // Real transitions carry action 3, imaginary action 17; counting actions
    // over 10^4 batches verifies exactness, not approximation.
    const data::Dataset real = synthetic_dataset(3, 4, 3);
    data::Dataset imag = synthetic_dataset(2, 5, 17);
    for (auto& r : imag.rollouts) r.provenance = data::Provenance::imaginary;
    const auto real_refs = data::flatten_transitions(real);
    const auto imag_refs = data::flatten_transitions(imag);
    REQUIRE(real_refs.size() == 12);
    REQUIRE(imag_refs.size() == 10);

    const data::MixedBatchSampler sampler{0.5, 8};
    Rng rng(1234);
    long real_rows = 0, imag_rows = 0;
    for (int b = 0; b < 10000; ++b) {
        const data::Batch batch = data::sample_batch(real, real_refs, &imag, imag_refs, sampler,
                                                     16, rng);
        for (int i = 0; i < batch.size; ++i) {
            if (batch.actions[static_cast<std::size_t>(i)] == 3) ++real_rows;
            else if (batch.actions[static_cast<std::size_t>(i)] == 17) ++imag_rows;
        }
    }
    CHECK(real_rows == 40000);
    CHECK(imag_rows == 40000);
}

TEST_CASE("sampling is deterministic and respects pool requirements") {
    const data::Dataset real = synthetic_dataset(2, 3, 5);
    const auto real_refs = data::flatten_transitions(real);
    const data::MixedBatchSampler all_real{1.0, 6};

    Rng a(9), b(9);
    const data::Batch ba = data::sample_batch(real, real_refs, nullptr, {}, all_real, 16, a);
    const data::Batch bb = data::sample_batch(real, real_refs, nullptr, {}, all_real, 16, b);
    CHECK(ba.actions == bb.actions);
    CHECK(ba.images == bb.images);
    CHECK(ba.next_images == bb.next_images);
    CHECK(ba.tokens == bb.tokens);

    CHECK_THROWS(data::sample_batch(real, {}, nullptr, {}, all_real, 16, a));
    const data::MixedBatchSampler mixed{0.5, 6};
    CHECK_THROWS(data::sample_batch(real, real_refs, nullptr, {}, mixed, 16, a));
}

TEST_CASE("batch rows carry rendering, done flags, and next states") {
    // Single rollout of length 1: every sampled row is terminal and the next
    // image must render final_positions.
    const data::Dataset ds = data::collect_expert_dataset(
        {lang::StructuredGoal{lang::Family::absolute, 0, env::GoalDirection::East, -1}}, 1, 17);
    data::Dataset one;
    one.manifest = ds.manifest;
    data::Rollout r = ds.rollouts[0];
    const Eigen::Matrix<double, 10, 1> after_first = r.state_after(1);
    r.steps.resize(1);
    r.final_positions = after_first;
    one.rollouts.push_back(r);

    const auto refs = data::flatten_transitions(one);
    REQUIRE(refs.size() == 1);
    Rng rng(0);
    const data::Batch batch =
        data::sample_batch(one, refs, nullptr, {}, data::MixedBatchSampler{1.0, 4}, 16, rng);
    std::vector<float> want(3 * 16 * 16);
    data::render_chw(r.steps[0].positions, 16, want.data());
    for (int i = 0; i < batch.size; ++i) {
        CHECK(batch.dones[static_cast<std::size_t>(i)] == 1.0f);
        CHECK(batch.actions[static_cast<std::size_t>(i)] == r.steps[0].action);
        for (int p = 0; p < 3 * 16 * 16; ++p) CHECK(batch.images(i, p) == want[p]);
    }
    std::vector<float> next(3 * 16 * 16);
    data::render_chw(r.final_positions, 16, next.data());
    for (int p = 0; p < 3 * 16 * 16; ++p) CHECK(batch.next_images(0, p) == next[p]);
}

TEST_CASE("merge concatenates rollouts and keeps the first manifest") {
    data::Dataset a = synthetic_dataset(2, 3, 1);
    a.manifest.config_hash = "aaaa";
    data::Dataset b = synthetic_dataset(3, 2, 2);
    b.manifest.config_hash = "bbbb";
    const data::Dataset merged = data::merge({a, b});
    CHECK(merged.manifest.config_hash == "aaaa");
    CHECK(merged.rollouts.size() == 5);
    CHECK(merged.transition_count() == a.transition_count() + b.transition_count());
    CHECK_THROWS(data::merge({}));
}

TEST_CASE("unsatisfied resets never start on the goal") {
    const std::vector<lang::StructuredGoal> goals = lang::enumerate_goals();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const lang::StructuredGoal& g = goals[seed % goals.size()];
        const env::BallState s = data::reset_unsatisfied(seed, {1, 2}, g.view());
        CHECK(!env::goal_satisfied(s, g.view()));
        CHECK(s.valid());
        const env::BallState again = data::reset_unsatisfied(seed, {1, 2}, g.view());
        CHECK(s.flat() == again.flat());
    }
}
