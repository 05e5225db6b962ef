#include "vlgor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vlgor::metrics {
namespace {

constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2
constexpr int kWindow = 8;
constexpr int kStride = 4;

void require_same_dims(const env::Image& a, const env::Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("image dimension mismatch: " + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                    "x" + std::to_string(b.height));
}

}  // namespace

double psnr(const env::Image& a, const env::Image& b, double max_val) {
    require_same_dims(a, b);
    double mse = 0.0;
    const std::size_t n = a.values.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.values[i]) - static_cast<double>(b.values[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(const env::Image& a, const env::Image& b) {
    require_same_dims(a, b);
    if (a.width < kWindow || a.height < kWindow)
        throw std::invalid_argument("image smaller than the 8x8 SSIM window");
    double total = 0.0;
    long windows = 0;
    for (int c = 0; c < 3; ++c) {
        for (int wy = 0; wy + kWindow <= a.height; wy += kStride) {
            for (int wx = 0; wx + kWindow <= a.width; wx += kStride) {
                double sum_a = 0.0, sum_b = 0.0, sum_aa = 0.0, sum_bb = 0.0, sum_ab = 0.0;
                for (int y = wy; y < wy + kWindow; ++y) {
                    for (int x = wx; x < wx + kWindow; ++x) {
                        const double va = a.at(y, x, c);
                        const double vb = b.at(y, x, c);
                        sum_a += va;
                        sum_b += vb;
                        sum_aa += va * va;
                        sum_bb += vb * vb;
                        sum_ab += va * vb;
                    }
                }
                const double n = kWindow * kWindow;
                const double mu_a = sum_a / n;
                const double mu_b = sum_b / n;
                const double var_a = sum_aa / n - mu_a * mu_a;
                const double var_b = sum_bb / n - mu_b * mu_b;
                const double cov = sum_ab / n - mu_a * mu_b;
                total += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

double med(const data::Rollout& predicted, const data::Rollout& reference, int main_object) {
    if (predicted.steps.empty() || reference.steps.empty())
        throw std::invalid_argument("med: empty rollout");
    if (main_object < 0 || main_object >= env::kNumBalls)
        throw std::invalid_argument("med: main object id out of range");
    const int horizon = std::min(predicted.length(), reference.length());
    double total = 0.0;
    for (int t = 1; t <= horizon; ++t) {
        const auto& p = predicted.state_after(t);
        const auto& r = reference.state_after(t);
        const double dx = p(2 * main_object) - r(2 * main_object);
        const double dy = p(2 * main_object + 1) - r(2 * main_object + 1);
        total += std::sqrt(dx * dx + dy * dy);
    }
    return total / static_cast<double>(horizon);
}

QualityRow evaluate_quality(const RolloutGenerator& generator,
                            const std::vector<HeldoutPair>& pairs, int budget, int resolution,
                            std::uint64_t seed) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_quality: no held-out pairs");
    double psnr_sum = 0.0, ssim_sum = 0.0, med_sum = 0.0;
    long frames = 0;
    int successes = 0;
    for (const HeldoutPair& pair : pairs) {
        const auto& ref = pair.reference;
        const data::Rollout gen = generator.generate(ref.steps.front().positions, pair.instruction);
        const int horizon = std::min(gen.length(), ref.length());
        for (int t = 1; t <= horizon; ++t) {
            const env::Image img_gen =
                env::render(env::BallState::from_flat(gen.state_after(t)), resolution);
            const env::Image img_ref =
                env::render(env::BallState::from_flat(ref.state_after(t)), resolution);
            psnr_sum += psnr(img_gen, img_ref);
            ssim_sum += ssim(img_gen, img_ref);
            ++frames;
        }
        med_sum += med(gen, ref, pair.reference.goal.target);
        const env::BallState final_state = env::BallState::from_flat(gen.final_positions);
        if (env::goal_satisfied(final_state, pair.reference.goal.view())) ++successes;
    }
    QualityRow row;
    row.budget = budget;
    row.psnr_db = psnr_sum / static_cast<double>(frames);
    row.ssim = ssim_sum / static_cast<double>(frames);
    row.med = med_sum / static_cast<double>(pairs.size());
    row.success_rate_pct = 100.0 * successes / static_cast<double>(pairs.size());
    row.seed = seed;
    return row;
}

std::vector<QualityRow> quality_harness(
    const std::vector<std::pair<int, const RolloutGenerator*>>& generators_by_budget,
    const std::vector<HeldoutPair>& pairs, int resolution, std::uint64_t seed) {
    std::vector<QualityRow> rows;
    rows.reserve(generators_by_budget.size());
    for (const auto& [budget, generator] : generators_by_budget) {
        if (generator == nullptr)
            throw std::invalid_argument("quality_harness: missing generator for budget " +
                                        std::to_string(budget));
        rows.push_back(evaluate_quality(*generator, pairs, budget, resolution, seed));
    }
    return rows;
}

void write_quality_csv(const std::string& path, const std::vector<QualityRow>& rows,
                       const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "# config_hash=" << config_hash << "\n";
    out << "budget, psnr_db, ssim, med, success_rate_pct, seed\n";
    out.precision(17);
    for (const QualityRow& r : rows) {
        out << r.budget << ", " << r.psnr_db << ", " << r.ssim << ", " << r.med << ", "
            << r.success_rate_pct << ", " << r.seed << "\n";
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<QualityRow> read_quality_csv(const std::string& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::vector<QualityRow> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# config_hash=", 0) == 0) {
            if (config_hash) *config_hash = line.substr(14);
            continue;
        }
        if (!header_seen) {  // column header
            header_seen = true;
            continue;
        }
        std::istringstream ls(line);
        QualityRow row;
        char comma = 0;
        ls >> row.budget >> comma >> row.psnr_db >> comma >> row.ssim >> comma >> row.med >>
            comma >> row.success_rate_pct >> comma >> row.seed;
        if (ls.fail()) throw std::runtime_error(path + ": malformed quality row '" + line + "'");
        rows.push_back(row);
    }
    return rows;
}

}  // namespace vlgor::metrics
