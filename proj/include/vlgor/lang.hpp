// Instruction grammar: structured goals over (family, target, direction,
// reference), paraphrase templates, a closed-vocabulary tokenizer, and the
// counterfactual edit operators used to build imaginary-rollout prompts.
#pragma once

#include <string>
#include <vector>

#include "vlgor/env.hpp"
#include "vlgor/rng.hpp"

namespace vlgor::lang {

enum class Family : int { absolute = 0, relative = 1 };

struct StructuredGoal {
    Family family = Family::absolute;
    int target = 0;                                            // ball/color id
    env::GoalDirection direction = env::GoalDirection::East;   // E,N,W,S axes
    int reference = -1;                                        // relative only

    bool operator==(const StructuredGoal&) const = default;
    bool operator<(const StructuredGoal& o) const;
    env::StructuredGoalView view() const;
    std::string key() const;  // compact stable id, e.g. "rel:2:E:0"
};

inline constexpr int kTokenLength = 12;
inline constexpr int kTemplatesPerFamily = 6;
inline constexpr int kTrainTemplates = 4;  // ids 0..3 train, 4..5 held out

struct Instruction {
    StructuredGoal goal;
    int template_id = 0;
    std::string surface;
    std::vector<int> tokens;  // fixed length kTokenLength
    std::string tier_tag = "train";  // train | rephrase | counterfactual | hard
};

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    static const Vocabulary& builtin();

    int size() const { return static_cast<int>(words_.size()); }
    int id(const std::string& word) const;  // kUnk when absent
    const std::string& word(int id) const;
    const std::vector<std::string>& words() const { return words_; }

  private:
    explicit Vocabulary(std::vector<std::string> words);
    std::vector<std::string> words_;
};

std::string color_word(int id);
std::string direction_word(Family family, env::GoalDirection d);
env::GoalDirection parse_goal_direction(const std::string& name);  // "E"/"N"/"W"/"S"
std::string goal_direction_name(env::GoalDirection d);

// All 100 goals: 20 absolute (target-major, then direction), then 80
// relative (target, then reference != target, then direction).
std::vector<StructuredGoal> enumerate_goals();

std::string surface_form(const StructuredGoal& goal, int template_id);
Instruction realize(const StructuredGoal& goal, int template_id,
                    const std::string& tier_tag = "train");

// Lowercase, whitespace split, strip surrounding punctuation, map to ids
// (UNK for unknowns), pad/truncate to kTokenLength.
std::vector<int> tokenize(const std::string& surface);

// Replace target with a uniformly chosen different color (never the
// reference); all other fields preserved.
StructuredGoal counterfactual_target(const StructuredGoal& goal, Rng& rng);
// Replace direction with a uniformly chosen different one; rest preserved.
StructuredGoal counterfactual_behavior(const StructuredGoal& goal, Rng& rng);

// Structural edit distance: 0 identical; 1 = same family and reference,
// exactly one of {target, direction} differs; 2 otherwise (incl. family).
int edit_distance(const StructuredGoal& a, const StructuredGoal& b);

struct TierSet {
    std::vector<StructuredGoal> rephrase_goals;        // == train goals
    std::vector<StructuredGoal> counterfactual_goals;  // edit distance 1 from train
    std::vector<StructuredGoal> hard_goals;            // edit distance >= 2
    std::vector<Instruction> rephrase;                 // held-out templates 4,5
    std::vector<Instruction> counterfactual;           // train templates 0..3
    std::vector<Instruction> hard;                     // train templates 0..3
};

// Tier partition relative to the training goal set; errors if a tier
// would be empty under the given split.
TierSet build_tiers(const std::vector<StructuredGoal>& train_goals);

// Rotating compositional split over the absolute family: combos with
// (target + direction) mod 5 < round((1 - fraction) * 5) are held out.
// Every color and direction word still appears in training; the held-out
// combos form the counterfactual tier and the whole relative family the
// hard tier.
std::vector<StructuredGoal> train_goals_for_fraction(double fraction);

// train_goals_for_fraction(0.6): 12 train goals, 8 held-out combos.
std::vector<StructuredGoal> default_train_goals();

}  // namespace vlgor::lang
