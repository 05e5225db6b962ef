#include "vlgor/lang.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace vlgor::lang {
namespace {

const std::array<std::string, env::kNumBalls> kColors = {"red", "green", "blue", "yellow",
                                                         "purple"};
// Board-side words for absolute goals, displacement words for relative ones,
// both indexed by GoalDirection (E, N, W, S).
const std::array<std::string, 4> kAbsoluteDirs = {"right", "top", "left", "bottom"};
const std::array<std::string, 4> kRelativeDirs = {"right", "front", "left", "behind"};

// Templates use {c} = target color, {d} = direction word, {r} = reference
// color. Ids 0..3 appear in training data; 4..5 are held out for the
// rephrasing tier. Longest surface form is 9 tokens.
const std::array<std::string, kTemplatesPerFamily> kAbsoluteTemplates = {
    "move the {c} ball toward the {d}",
    "push the {c} ball to the {d} side",
    "take the {c} ball to the {d} edge",
    "shift the {c} ball toward the {d}",
    "the {c} ball belongs at the {d}",
    "send the {c} ball over to the {d}",
};
const std::array<std::string, kTemplatesPerFamily> kRelativeTemplates = {
    "move the {c} ball {d} of the {r} ball",
    "push the {c} ball {d} of the {r} ball",
    "place the {c} ball {d} of the {r} ball",
    "keep the {c} ball {d} of the {r} ball",
    "the {c} ball goes {d} of the {r} ball",
    "set the {c} ball {d} of the {r} one",
};

std::string substitute(std::string text, const std::string& slot, const std::string& value) {
    for (std::size_t pos = text.find(slot); pos != std::string::npos; pos = text.find(slot)) {
        text.replace(pos, slot.size(), value);
    }
    return text;
}

}  // namespace

bool StructuredGoal::operator<(const StructuredGoal& o) const {
    const auto tup = [](const StructuredGoal& g) {
        return std::make_tuple(static_cast<int>(g.family), g.target,
                               static_cast<int>(g.direction), g.reference);
    };
    return tup(*this) < tup(o);
}

env::StructuredGoalView StructuredGoal::view() const {
    env::StructuredGoalView v;
    v.relative = (family == Family::relative);
    v.target = target;
    v.direction = direction;
    v.reference = reference;
    return v;
}

std::string StructuredGoal::key() const {
    std::ostringstream out;
    out << (family == Family::absolute ? "abs" : "rel") << ":" << target << ":"
        << goal_direction_name(direction);
    if (family == Family::relative) out << ":" << reference;
    return out.str();
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

const Vocabulary& Vocabulary::builtin() {
    // Fixed closed vocabulary: ids are positional and stable. PAD and UNK
    // first, then colors, direction words, template words, and a handful of
    // spare fillers kept for forward compatibility of saved datasets.
    static const Vocabulary vocab(std::vector<std::string>{
        "<pad>", "<unk>",
        // colors
        "red", "green", "blue", "yellow", "purple",
        // directions
        "right", "top", "left", "bottom", "front", "behind",
        // template words
        "move", "the", "ball", "toward", "push", "to", "side", "take", "edge", "shift",
        "belongs", "at", "send", "over", "of", "place", "keep", "goes", "set", "one",
        // spare fillers
        "a", "an", "please", "now", "go", "roll", "slide", "drag", "bring", "put", "it",
        "next", "near", "this", "that", "from", "away", "up", "down", "into", "onto",
        "middle", "center", "stay", "should", "corner", "zone"});
    return vocab;
}

int Vocabulary::id(const std::string& word) const {
    static const std::unordered_map<std::string, int> index = [] {
        std::unordered_map<std::string, int> m;
        const auto& ws = builtin().words_;
        for (int i = 0; i < static_cast<int>(ws.size()); ++i) m.emplace(ws[i], i);
        return m;
    }();
    const auto it = index.find(word);
    return it == index.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return words_[id];
}

std::string color_word(int id) {
    if (id < 0 || id >= env::kNumBalls) throw std::out_of_range("color id out of range");
    return kColors[id];
}

std::string direction_word(Family family, env::GoalDirection d) {
    const auto& table = family == Family::absolute ? kAbsoluteDirs : kRelativeDirs;
    return table[static_cast<int>(d)];
}

env::GoalDirection parse_goal_direction(const std::string& name) {
    if (name == "E") return env::GoalDirection::East;
    if (name == "N") return env::GoalDirection::North;
    if (name == "W") return env::GoalDirection::West;
    if (name == "S") return env::GoalDirection::South;
    throw std::invalid_argument("unknown goal direction '" + name + "'");
}

std::string goal_direction_name(env::GoalDirection d) {
    switch (d) {
        case env::GoalDirection::East: return "E";
        case env::GoalDirection::North: return "N";
        case env::GoalDirection::West: return "W";
        case env::GoalDirection::South: return "S";
    }
    throw std::invalid_argument("bad goal direction");
}

std::vector<StructuredGoal> enumerate_goals() {
    std::vector<StructuredGoal> goals;
    goals.reserve(100);
    for (int t = 0; t < env::kNumBalls; ++t) {
        for (int d = 0; d < 4; ++d) {
            goals.push_back({Family::absolute, t, static_cast<env::GoalDirection>(d), -1});
        }
    }
    for (int t = 0; t < env::kNumBalls; ++t) {
        for (int r = 0; r < env::kNumBalls; ++r) {
            if (r == t) continue;
            for (int d = 0; d < 4; ++d) {
                goals.push_back({Family::relative, t, static_cast<env::GoalDirection>(d), r});
            }
        }
    }
    return goals;
}

std::string surface_form(const StructuredGoal& goal, int template_id) {
    if (template_id < 0 || template_id >= kTemplatesPerFamily)
        throw std::invalid_argument("template id out of range");
    const bool rel = goal.family == Family::relative;
    if (rel && (goal.reference < 0 || goal.reference == goal.target))
        throw std::invalid_argument("relative goal needs a distinct reference");
    std::string text = rel ? kRelativeTemplates[template_id] : kAbsoluteTemplates[template_id];
    text = substitute(std::move(text), "{c}", color_word(goal.target));
    text = substitute(std::move(text), "{d}", direction_word(goal.family, goal.direction));
    if (rel) text = substitute(std::move(text), "{r}", color_word(goal.reference));
    return text;
}

Instruction realize(const StructuredGoal& goal, int template_id, const std::string& tier_tag) {
    Instruction ins;
    ins.goal = goal;
    ins.template_id = template_id;
    ins.surface = surface_form(goal, template_id);
    ins.tokens = tokenize(ins.surface);
    ins.tier_tag = tier_tag;
    return ins;
}

std::vector<int> tokenize(const std::string& surface) {
    const Vocabulary& vocab = Vocabulary::builtin();
    std::vector<int> ids;
    ids.reserve(kTokenLength);
    std::istringstream in(surface);
    std::string raw;
    while (in >> raw && static_cast<int>(ids.size()) < kTokenLength) {
        std::string word;
        for (char ch : raw) {
            if (std::isalnum(static_cast<unsigned char>(ch)))
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
        if (word.empty()) continue;
        ids.push_back(vocab.id(word));
    }
    ids.resize(kTokenLength, Vocabulary::kPad);
    return ids;
}

StructuredGoal counterfactual_target(const StructuredGoal& goal, Rng& rng) {
    std::vector<int> candidates;
    for (int c = 0; c < env::kNumBalls; ++c) {
        if (c == goal.target || c == goal.reference) continue;
        candidates.push_back(c);
    }
    StructuredGoal out = goal;
    out.target = candidates[rng.index(static_cast<int>(candidates.size()))];
    return out;
}

StructuredGoal counterfactual_behavior(const StructuredGoal& goal, Rng& rng) {
    std::vector<int> candidates;
    for (int d = 0; d < 4; ++d) {
        if (d == static_cast<int>(goal.direction)) continue;
        candidates.push_back(d);
    }
    StructuredGoal out = goal;
    out.direction =
        static_cast<env::GoalDirection>(candidates[rng.index(static_cast<int>(candidates.size()))]);
    return out;
}

int edit_distance(const StructuredGoal& a, const StructuredGoal& b) {
    if (a == b) return 0;
    if (a.family == b.family && a.reference == b.reference) {
        const int diffs = (a.target != b.target ? 1 : 0) + (a.direction != b.direction ? 1 : 0);
        if (diffs == 1) return 1;
    }
    return 2;
}

TierSet build_tiers(const std::vector<StructuredGoal>& train_goals) {
    if (train_goals.empty()) throw std::invalid_argument("empty training goal set");
    const auto in_train = [&](const StructuredGoal& g) {
        return std::find(train_goals.begin(), train_goals.end(), g) != train_goals.end();
    };
    TierSet tiers;
    tiers.rephrase_goals = train_goals;
    for (const StructuredGoal& g : enumerate_goals()) {
        if (in_train(g)) continue;
        int min_dist = 2;
        for (const StructuredGoal& t : train_goals) min_dist = std::min(min_dist, edit_distance(t, g));
        (min_dist == 1 ? tiers.counterfactual_goals : tiers.hard_goals).push_back(g);
    }
    if (tiers.counterfactual_goals.empty())
        throw std::runtime_error("counterfactual tier is empty for this split");
    if (tiers.hard_goals.empty()) throw std::runtime_error("hard tier is empty for this split");
    for (const StructuredGoal& g : tiers.rephrase_goals) {
        for (int k = kTrainTemplates; k < kTemplatesPerFamily; ++k)
            tiers.rephrase.push_back(realize(g, k, "rephrase"));
    }
    for (const StructuredGoal& g : tiers.counterfactual_goals) {
        for (int k = 0; k < kTrainTemplates; ++k)
            tiers.counterfactual.push_back(realize(g, k, "counterfactual"));
    }
    for (const StructuredGoal& g : tiers.hard_goals) {
        for (int k = 0; k < kTrainTemplates; ++k) tiers.hard.push_back(realize(g, k, "hard"));
    }
    return tiers;
}

std::vector<StructuredGoal> train_goals_for_fraction(double fraction) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("train_goals_for_fraction: fraction must be in (0,1]");
    const int held = static_cast<int>(std::lround((1.0 - fraction) * 5.0));
    std::vector<StructuredGoal> goals;
    for (int t = 0; t < env::kNumBalls; ++t) {
        for (int d = 0; d < 4; ++d) {
            if ((t + d) % 5 < held) continue;
            goals.push_back({Family::absolute, t, static_cast<env::GoalDirection>(d), -1});
        }
    }
    return goals;
}

std::vector<StructuredGoal> default_train_goals() { return train_goals_for_fraction(0.6); }

}  // namespace vlgor::lang
