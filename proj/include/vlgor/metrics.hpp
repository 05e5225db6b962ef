// Rollout-quality metrics (PSNR, SSIM, MED) and the budget-sweep quality
// harness that scores generated rollouts against held-out expert ones.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vlgor/data.hpp"
#include "vlgor/env.hpp"

namespace vlgor::metrics {

inline constexpr double kPsnrCap = 99.0;

double psnr(const env::Image& a, const env::Image& b, double max_val = 1.0);

// Uniform 8x8 window, stride 4, channel-averaged, K1=0.01 K2=0.03 L=1.
double ssim(const env::Image& a, const env::Image& b);

// Mean Euclidean distance of the main (target) ball between the two
// trajectories over aligned post-action states t = 1..min(lengths).
double med(const data::Rollout& predicted, const data::Rollout& reference, int main_object);

struct QualityRow {
    int budget = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double med = 0.0;
    double success_rate_pct = 0.0;
    std::uint64_t seed = 0;
};

// Anything that can synthesize a rollout from (s_0, instruction): the
// trained world model in production, the true-dynamics oracle in tests.
class RolloutGenerator {
  public:
    virtual ~RolloutGenerator() = default;
    virtual data::Rollout generate(const Eigen::Matrix<double, 10, 1>& s0,
                                   const lang::Instruction& instruction) const = 0;
};

// A held-out real rollout and the instruction the generator will receive;
// both share s_0 and the goal.
struct HeldoutPair {
    data::Rollout reference;
    lang::Instruction instruction;
};

QualityRow evaluate_quality(const RolloutGenerator& generator,
                            const std::vector<HeldoutPair>& pairs, int budget, int resolution,
                            std::uint64_t seed);

std::vector<QualityRow> quality_harness(
    const std::vector<std::pair<int, const RolloutGenerator*>>& generators_by_budget,
    const std::vector<HeldoutPair>& pairs, int resolution, std::uint64_t seed);

// CSV with the fixed header budget, psnr_db, ssim, med, success_rate_pct, seed.
void write_quality_csv(const std::string& path, const std::vector<QualityRow>& rows,
                       const std::string& config_hash);
std::vector<QualityRow> read_quality_csv(const std::string& path, std::string* config_hash = nullptr);

}  // namespace vlgor::metrics
