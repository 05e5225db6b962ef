// BallWorld: a deterministic 2-D simulator with five movable balls on the
// unit square. 40 discrete actions (ball x direction), sparse goal rewards,
// software-rasterized frames, and a greedy scripted expert.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vlgor/rng.hpp"

namespace vlgor::env {

inline constexpr int kNumBalls = 5;
inline constexpr int kNumDirections = 8;
inline constexpr int kNumActions = kNumBalls * kNumDirections;  // 40
inline constexpr double kRadius = 0.05;
inline constexpr double kStep = 0.05;

// Movement directions, counter-clockwise from +x.
enum class Direction : int { E = 0, NE, N, NW, W, SW, S, SE };

// Goal directions are the four axis-aligned ones. For absolute goals they
// mean board sides; for relative goals, displacement from the reference.
enum class GoalDirection : int { East = 0, North, West, South };

Eigen::Vector2d unit_vector(Direction d);
Eigen::Vector2d unit_vector(GoalDirection d);

struct ActionIndex {
    int index = 0;  // in [0, 40)

    int ball() const { return index / kNumDirections; }
    Direction direction() const { return static_cast<Direction>(index % kNumDirections); }
    static ActionIndex encode(int ball, Direction d) {
        return ActionIndex{ball * kNumDirections + static_cast<int>(d)};
    }
};

struct BallState {
    // positions(i) = {x_i, y_i}, each in [kRadius, 1 - kRadius].
    std::array<Eigen::Vector2d, kNumBalls> positions;

    bool valid() const;
    Eigen::Matrix<double, 2 * kNumBalls, 1> flat() const;
    static BallState from_flat(const Eigen::Ref<const Eigen::VectorXd>& v);
};

struct StructuredGoalView {
    // Mirror of lang::StructuredGoal to keep env free of the grammar.
    bool relative = false;
    int target = 0;              // ball/color id
    GoalDirection direction = GoalDirection::East;
    int reference = -1;          // ball id, relative goals only
};

// Image in [0,1]^3, row-major HWC.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> values;  // size height*width*3

    float& at(int y, int x, int c) { return values[(y * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return values[(y * width + x) * 3 + c]; }
};

// Uniform valid state, deterministic in seed (rejection sampled).
BallState reset(std::uint64_t seed);

// Displaces one ball by kStep along the action direction; moves that would
// leave the board or overlap another ball are blocked and return the input
// state unchanged.
BallState step(const BallState& state, ActionIndex action);

bool blocked(const BallState& state, ActionIndex action);

// White background, one filled disc per ball (red, green, blue, yellow,
// purple for ids 0..4), disc center at position * resolution.
Image render(const BallState& state, int resolution);

void write_ppm(const Image& img, const std::string& path);

bool goal_satisfied(const BallState& state, const StructuredGoalView& goal);

// Sparse 0/1 by default; shaped mode returns -distance when unsatisfied.
double reward(const BallState& state, const StructuredGoalView& goal, bool shaped = false);

// Distance from the target ball to the goal region: for absolute goals the
// gap to the threshold line, for relative goals the distance from the offset
// pos_target - pos_ref to the satisfying set (cone within 45 degrees of u_d,
// norm in [0.1, 0.3]). Zero iff the goal is satisfied; this is the expert's
// progress measure, and measuring to the set rather than to the point
// ref + 0.2 * u_d keeps it free of spurious local minima when the target
// sits in-band on the wrong side of the reference.
double goal_distance(const BallState& state, const StructuredGoalView& goal);

// Greedy expert: the strictly-improving action of least index, measured by
// post-step goal_distance. When nothing improves (target boxed in), shakes
// a uniformly random unblocked non-target ball, preferring balls near the
// target since one of those is the blocker.
ActionIndex scripted_expert(const BallState& state, const StructuredGoalView& goal, Rng& rng);

}  // namespace vlgor::env
