#include "vlgor/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vlgor::env {
namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;

const std::array<Eigen::Vector2d, kNumDirections>& direction_table() {
    static const std::array<Eigen::Vector2d, kNumDirections> table = {{
        {1.0, 0.0},                  // E
        {kInvSqrt2, kInvSqrt2},      // NE
        {0.0, 1.0},                  // N
        {-kInvSqrt2, kInvSqrt2},     // NW
        {-1.0, 0.0},                 // W
        {-kInvSqrt2, -kInvSqrt2},    // SW
        {0.0, -1.0},                 // S
        {kInvSqrt2, -kInvSqrt2},     // SE
    }};
    return table;
}

bool in_bounds(const Eigen::Vector2d& p) {
    return p.x() >= kRadius && p.x() <= 1.0 - kRadius && p.y() >= kRadius &&
           p.y() <= 1.0 - kRadius;
}

bool overlaps_other(const std::array<Eigen::Vector2d, kNumBalls>& pos, int ball,
                    const Eigen::Vector2d& candidate) {
    for (int j = 0; j < kNumBalls; ++j) {
        if (j == ball) continue;
        if ((candidate - pos[j]).norm() < 2.0 * kRadius) return true;
    }
    return false;
}

// Ball colors: red, green, blue, yellow, purple.
const std::array<Eigen::Vector3f, kNumBalls>& color_table() {
    static const std::array<Eigen::Vector3f, kNumBalls> table = {{
        {1.0f, 0.0f, 0.0f},
        {0.0f, 1.0f, 0.0f},
        {0.0f, 0.0f, 1.0f},
        {1.0f, 1.0f, 0.0f},
        {0.5f, 0.0f, 0.5f},
    }};
    return table;
}

}  // namespace

Eigen::Vector2d unit_vector(Direction d) { return direction_table()[static_cast<int>(d)]; }

Eigen::Vector2d unit_vector(GoalDirection d) {
    switch (d) {
        case GoalDirection::East: return {1.0, 0.0};
        case GoalDirection::North: return {0.0, 1.0};
        case GoalDirection::West: return {-1.0, 0.0};
        case GoalDirection::South: return {0.0, -1.0};
    }
    throw std::invalid_argument("bad goal direction");
}

bool BallState::valid() const {
    for (int i = 0; i < kNumBalls; ++i) {
        if (!in_bounds(positions[i])) return false;
        for (int j = i + 1; j < kNumBalls; ++j) {
            if ((positions[i] - positions[j]).norm() < 2.0 * kRadius) return false;
        }
    }
    return true;
}

Eigen::Matrix<double, 2 * kNumBalls, 1> BallState::flat() const {
    Eigen::Matrix<double, 2 * kNumBalls, 1> v;
    for (int i = 0; i < kNumBalls; ++i) {
        v(2 * i) = positions[i].x();
        v(2 * i + 1) = positions[i].y();
    }
    return v;
}

BallState BallState::from_flat(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != 2 * kNumBalls) throw std::invalid_argument("state vector must have 10 entries");
    BallState s;
    for (int i = 0; i < kNumBalls; ++i) s.positions[i] = {v(2 * i), v(2 * i + 1)};
    return s;
}

BallState reset(std::uint64_t seed) {
    Rng rng(seed);
    BallState s;
    // Rejection-sample whole configurations so the distribution stays
    // exchangeable across balls.
    for (;;) {
        for (int i = 0; i < kNumBalls; ++i) {
            s.positions[i] = {rng.uniform(kRadius, 1.0 - kRadius),
                              rng.uniform(kRadius, 1.0 - kRadius)};
        }
        bool ok = true;
        for (int i = 0; i < kNumBalls && ok; ++i) {
            for (int j = i + 1; j < kNumBalls; ++j) {
                if ((s.positions[i] - s.positions[j]).norm() < 2.0 * kRadius) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) return s;
    }
}

bool blocked(const BallState& state, ActionIndex action) {
    const int b = action.ball();
    const Eigen::Vector2d candidate =
        state.positions[b] + kStep * unit_vector(action.direction());
    return !in_bounds(candidate) || overlaps_other(state.positions, b, candidate);
}

BallState step(const BallState& state, ActionIndex action) {
    if (action.index < 0 || action.index >= kNumActions)
        throw std::invalid_argument("action index out of range");
    if (blocked(state, action)) return state;
    BallState next = state;
    next.positions[action.ball()] += kStep * unit_vector(action.direction());
    return next;
}

Image render(const BallState& state, int resolution) {
    if (resolution < 4) throw std::invalid_argument("resolution too small");
    Image img;
    img.height = resolution;
    img.width = resolution;
    img.values.assign(static_cast<std::size_t>(resolution) * resolution * 3, 1.0f);
    const double r_px = kRadius * resolution;
    const double r2 = r_px * r_px;
    // Painter order by ball id; discs cannot overlap in valid states anyway.
    for (int b = 0; b < kNumBalls; ++b) {
        const double cx = state.positions[b].x() * resolution;
        const double cy = state.positions[b].y() * resolution;
        const Eigen::Vector3f& col = color_table()[b];
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - r_px)));
        const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(cy + r_px)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - r_px)));
        const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(cx + r_px)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5) - cx;
                const double dy = (y + 0.5) - cy;
                if (dx * dx + dy * dy <= r2) {
                    img.at(y, x, 0) = col(0);
                    img.at(y, x, 1) = col(1);
                    img.at(y, x, 2) = col(2);
                }
            }
        }
    }
    return img;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

bool goal_satisfied(const BallState& state, const StructuredGoalView& goal) {
    const Eigen::Vector2d& p = state.positions[goal.target];
    if (!goal.relative) {
        switch (goal.direction) {
            case GoalDirection::East: return p.x() >= 0.75;
            case GoalDirection::West: return p.x() <= 0.25;
            case GoalDirection::North: return p.y() >= 0.75;
            case GoalDirection::South: return p.y() <= 0.25;
        }
        throw std::invalid_argument("bad goal direction");
    }
    if (goal.reference == goal.target)
        throw std::invalid_argument("relative goal needs distinct reference ball");
    const Eigen::Vector2d delta = p - state.positions[goal.reference];
    const double n = delta.norm();
    if (n < 0.1 || n > 0.3) return false;
    // Within 45 degrees of the goal direction.
    return delta.dot(unit_vector(goal.direction)) >= kInvSqrt2 * n;
}

double reward(const BallState& state, const StructuredGoalView& goal, bool shaped) {
    if (goal_satisfied(state, goal)) return 1.0;
    return shaped ? -goal_distance(state, goal) : 0.0;
}

double goal_distance(const BallState& state, const StructuredGoalView& goal) {
    const Eigen::Vector2d& p = state.positions[goal.target];
    if (!goal.relative) {
        switch (goal.direction) {
            case GoalDirection::East: return std::max(0.0, 0.75 - p.x());
            case GoalDirection::West: return std::max(0.0, p.x() - 0.25);
            case GoalDirection::North: return std::max(0.0, 0.75 - p.y());
            case GoalDirection::South: return std::max(0.0, p.y() - 0.25);
        }
        throw std::invalid_argument("bad goal direction");
    }
    if (goal.reference == goal.target)
        throw std::invalid_argument("relative goal needs distinct reference ball");
    // Distance from delta = target - ref to the satisfying set, via a polar
    // clamp: radius into [0.1, 0.3], angle from u_d into [0, 45 deg].
    const Eigen::Vector2d delta = p - state.positions[goal.reference];
    const Eigen::Vector2d u = unit_vector(goal.direction);
    const double r = delta.norm();
    const double rc = std::clamp(r, 0.1, 0.3);
    if (delta.dot(u) >= kInvSqrt2 * r) {
        return std::abs(r - rc);  // inside the cone: clamp radius only
    }
    Eigen::Vector2d perp = delta - delta.dot(u) * u;
    const double pn = perp.norm();
    perp = pn > 1e-12 ? Eigen::Vector2d(perp / pn) : Eigen::Vector2d(-u.y(), u.x());
    const Eigen::Vector2d proj = rc * kInvSqrt2 * (u + perp);
    return (delta - proj).norm();
}

ActionIndex scripted_expert(const BallState& state, const StructuredGoalView& goal, Rng& rng) {
    // Greedy over all 40 actions (for relative goals, moving the reference
    // ball also shifts the goal region). Only strict improvement counts;
    // ties at equal distance go to the lowest index by the < comparison.
    const double here = goal_distance(state, goal);
    int best = -1;
    double best_dist = here;
    for (int i = 0; i < kNumActions; ++i) {
        const ActionIndex a{i};
        if (blocked(state, a)) continue;
        const double dist = goal_distance(step(state, a), goal);
        if (dist < best_dist - 1e-12) {
            best_dist = dist;
            best = i;
        }
    }
    if (best >= 0) return ActionIndex{best};
    // No single action helps: the board is in a local minimum basin (e.g. the
    // target sits in-band on the far side of the reference, where any orbit
    // step first inflates the radius). Look ahead two, then three actions for
    // the sequence with the lowest terminal distance and take its first step;
    // re-searching each call walks the full sequence without needing state.
    double esc_dist = here - 1e-12;
    int esc_first = -1;
    for (int i = 0; i < kNumActions; ++i) {
        if (blocked(state, ActionIndex{i})) continue;
        const BallState s1 = step(state, ActionIndex{i});
        for (int j = 0; j < kNumActions; ++j) {
            if (blocked(s1, ActionIndex{j})) continue;
            const double d = goal_distance(step(s1, ActionIndex{j}), goal);
            if (d < esc_dist - 1e-12) {
                esc_dist = d;
                esc_first = i;
            }
        }
    }
    if (esc_first < 0) {
        for (int i = 0; i < kNumActions && esc_first < 0; ++i) {
            if (blocked(state, ActionIndex{i})) continue;
            const BallState s1 = step(state, ActionIndex{i});
            for (int j = 0; j < kNumActions; ++j) {
                if (blocked(s1, ActionIndex{j})) continue;
                const BallState s2 = step(s1, ActionIndex{j});
                for (int k = 0; k < kNumActions; ++k) {
                    if (blocked(s2, ActionIndex{k})) continue;
                    const double d = goal_distance(step(s2, ActionIndex{k}), goal);
                    if (d < esc_dist - 1e-12) {
                        esc_dist = d;
                        esc_first = i;
                    }
                }
            }
        }
    }
    if (esc_first >= 0) return ActionIndex{esc_first};
    // Boxed in: nudge another ball to open a path. Balls near the target are
    // the blockers, so shake those when possible.
    std::vector<int> near;
    std::vector<int> all;
    for (int i = 0; i < kNumActions; ++i) {
        const ActionIndex a{i};
        if (a.ball() == goal.target) continue;
        if (blocked(state, a)) continue;
        all.push_back(i);
        const double gap =
            (state.positions[a.ball()] - state.positions[goal.target]).norm();
        if (gap < 0.2) near.push_back(i);
    }
    const std::vector<int>& candidates = near.empty() ? all : near;
    if (candidates.empty()) return ActionIndex{goal.target * kNumDirections};  // fully jammed no-op
    return ActionIndex{candidates[rng.index(static_cast<int>(candidates.size()))]};
}

}  // namespace vlgor::env
