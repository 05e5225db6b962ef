#include "vlgor/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vlgor/checkpoint.hpp"
#include "vlgor/data.hpp"
#include "vlgor/metrics.hpp"
#include "vlgor/policy.hpp"
#include "vlgor/rng.hpp"
#include "vlgor/serialize.hpp"
#include "vlgor/worldmodel.hpp"

namespace vlgor::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

StageLock::StageLock(const std::string& dir) : path_(dir + "/.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw std::runtime_error("output dir is locked: " + path_ +
                                 " exists (remove it if no other command is running)");
    ::close(fd);
}

StageLock::~StageLock() { ::unlink(path_.c_str()); }

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw std::runtime_error("missing artifact: " + path + " (run " + producer + " first)");
}

void check_hash(const std::string& artifact, const std::string& artifact_hash,
                const std::string& current) {
    if (artifact_hash != current)
        throw std::runtime_error("config-hash mismatch: " + artifact + " has '" + artifact_hash +
                                 "', current config hashes to '" + current + "'");
}

void echo_config(const Paths& paths, const cfg::RunConfig& config) {
    if (fs::exists(paths.config_echo())) return;
    std::ofstream out(paths.config_echo(), std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + paths.config_echo() + " for writing");
    out << "# config_hash=" << cfg::config_hash(config) << "\n" << cfg::to_text(config);
    if (!out) throw std::runtime_error("failed writing " + paths.config_echo());
}

void write_goals_file(const std::string& path, const std::string& tier,
                      const cfg::RunConfig& config,
                      const std::vector<lang::StructuredGoal>& goals,
                      const std::vector<lang::Instruction>& instructions) {
    json j;
    j["format"] = kGoalsFormat;
    j["tier"] = tier;
    j["seed"] = config.seed;
    j["config_hash"] = cfg::config_hash(config);
    json gs = json::array();
    for (const lang::StructuredGoal& g : goals) gs.push_back(data::goal_to_json(g));
    j["goals"] = std::move(gs);
    json is = json::array();
    for (const lang::Instruction& i : instructions) is.push_back(data::instruction_to_json(i));
    j["instructions"] = std::move(is);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

// Sorted (name, path) pairs of directory entries whose names match
// prefix...suffix; `name` is the middle part.
std::vector<std::pair<std::string, std::string>> glob_middle(const std::string& dir,
                                                             const std::string& prefix,
                                                             const std::string& suffix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() <= prefix.size() + suffix.size()) continue;
        if (name.rfind(prefix, 0) != 0) continue;
        if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        out.emplace_back(name.substr(prefix.size(), name.size() - prefix.size() - suffix.size()),
                         entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void load_wm_into(wm::WorldModelNet& net, const std::string& path, const std::string& hash) {
    std::vector<nn::ParamView<float>> params = net.params();
    const std::map<std::string, std::string> meta = ckpt::load_checkpoint(path, kWmArch, params);
    if (!meta.count("config_hash"))
        throw std::runtime_error(path + ": checkpoint has no config_hash metadata");
    check_hash(path, meta.at("config_hash"), hash);
    if (meta.count("resolution") && std::stoi(meta.at("resolution")) != net.resolution())
        throw std::runtime_error(path + ": checkpoint resolution " + meta.at("resolution") +
                                 " does not match env.resolution " +
                                 std::to_string(net.resolution()));
}

data::Dataset load_real(const Paths& paths, const std::string& hash) {
    require_file(paths.dataset_real(), "collect");
    data::Dataset ds = data::load(paths.dataset_real());
    check_hash(paths.dataset_real(), ds.manifest.config_hash, hash);
    return ds;
}

// "# config_hash=<hash>[ ...]" -> hash
bool parse_hash_comment(const std::string& line, std::string* hash) {
    constexpr const char* kPrefix = "# config_hash=";
    if (line.rfind(kPrefix, 0) != 0) return false;
    std::string rest = line.substr(std::string(kPrefix).size());
    const auto sp = rest.find(' ');
    if (hash) *hash = sp == std::string::npos ? rest : rest.substr(0, sp);
    return true;
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

GoalsFile read_goals_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (!j.contains("format") || j.at("format").get<std::string>() != kGoalsFormat)
        throw std::runtime_error(path + ": not a " + std::string(kGoalsFormat) + " file");
    GoalsFile out;
    out.tier = j.at("tier").get<std::string>();
    out.seed = j.at("seed").get<std::uint64_t>();
    out.config_hash = j.at("config_hash").get<std::string>();
    for (const json& g : j.at("goals")) out.goals.push_back(data::goal_from_json(g));
    for (const json& i : j.at("instructions"))
        out.instructions.push_back(data::instruction_from_json(i));
    return out;
}

std::vector<EvalRow> read_eval_csv(const std::string& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<EvalRow> rows;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        if (parse_hash_comment(line, config_hash)) continue;
        if (!header_seen) {  // column header
            header_seen = true;
            continue;
        }
        const std::vector<std::string> f = split_csv_row(line);
        if (f.size() != 6) throw std::runtime_error(path + ": malformed eval row '" + line + "'");
        EvalRow row;
        row.algo = f[0];
        row.tier = f[1];
        row.method = f[2];
        try {
            row.success_rate_pct = std::stod(f[3]);
            row.episodes = std::stoll(f[4]);
            row.seed = std::stoull(f[5]);
        } catch (const std::exception&) {
            throw std::runtime_error(path + ": malformed eval row '" + line + "'");
        }
        rows.push_back(row);
    }
    return rows;
}

std::string method_for(double ratio, const std::vector<std::string>& edit_kinds) {
    if (ratio >= 1.0) return "baseline";
    const std::set<std::string> kinds(edit_kinds.begin(), edit_kinds.end());
    if (kinds == std::set<std::string>{"behavior"}) return "wo_target";
    if (kinds == std::set<std::string>{"target"}) return "wo_behavior";
    if (kinds == std::set<std::string>{"target", "behavior", "both"}) return "full";
    return "mixed";
}

void run_make_goals(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::vector<lang::StructuredGoal> train =
        lang::train_goals_for_fraction(config.data_train_goal_fraction);
    if (train.empty())
        throw std::runtime_error("tier 'train' is empty under data.train_goal_fraction=" +
                                 std::to_string(config.data_train_goal_fraction));
    const lang::TierSet tiers = lang::build_tiers(train);
    std::vector<lang::Instruction> train_instructions;
    for (const lang::StructuredGoal& g : train)
        for (int t = 0; t < lang::kTrainTemplates; ++t)
            train_instructions.push_back(lang::realize(g, t, "train"));
    write_goals_file(paths.goals("train"), "train", config, train, train_instructions);
    write_goals_file(paths.goals("rephrase"), "rephrase", config, tiers.rephrase_goals,
                     tiers.rephrase);
    write_goals_file(paths.goals("counterfactual"), "counterfactual", config,
                     tiers.counterfactual_goals, tiers.counterfactual);
    write_goals_file(paths.goals("hard"), "hard", config, tiers.hard_goals, tiers.hard);
}

void run_collect(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    require_file(paths.goals("train"), "make-goals");
    const GoalsFile gf = read_goals_file(paths.goals("train"));
    check_hash(paths.goals("train"), gf.config_hash, hash);
    const data::Dataset ds =
        data::collect_expert_dataset(gf.goals, config.data_episodes_per_goal, config.seed, hash);
    data::save(ds, paths.dataset_real());
}

void run_train_wm(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    const data::Dataset ds = load_real(paths, hash);
    for (const int budget : config.wm_budget) {
        Rng sample_rng =
            Rng::derived(config.seed, {0x33ULL, static_cast<std::uint64_t>(budget)});
        const std::vector<wm::FinetuneSample> samples =
            wm::make_finetune_set(ds, config.wm_h, budget, sample_rng);
        wm::TrainWmConfig twc;
        twc.epochs = config.wm_epochs;
        twc.seed = derive_seed(config.seed, {0x34ULL, static_cast<std::uint64_t>(budget)});
        std::vector<double> losses;
        wm::WorldModelNet net =
            wm::train_worldmodel(samples, config.env_resolution, twc, &losses);
        std::vector<nn::ParamView<float>> params = net.params();
        const std::map<std::string, std::string> meta{
            {"config_hash", hash},
            {"seed", std::to_string(config.seed)},
            {"budget", std::to_string(budget)},
            {"h", std::to_string(config.wm_h)},
            {"resolution", std::to_string(config.env_resolution)},
            {"epochs", std::to_string(config.wm_epochs)}};
        ckpt::save_checkpoint(paths.wm_checkpoint(budget), kWmArch, params, meta);
        std::ofstream out(paths.wm_loss_csv(budget), std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot open " + paths.wm_loss_csv(budget) + " for writing");
        out << "# config_hash=" << hash << " seed=" << config.seed << "\n";
        out << "epoch, loss\n";
        out.precision(17);
        for (std::size_t i = 0; i < losses.size(); ++i) out << i << ", " << losses[i] << "\n";
        if (!out) throw std::runtime_error("failed writing " + paths.wm_loss_csv(budget));
    }
}

void run_imagine(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    const data::Dataset ds = load_real(paths, hash);
    const int budget = *std::max_element(config.wm_budget.begin(), config.wm_budget.end());
    require_file(paths.wm_checkpoint(budget), "train-wm");
    wm::WorldModelNet net(config.env_resolution, 0);
    load_wm_into(net, paths.wm_checkpoint(budget), hash);
    const wm::EditKind kind = wm::parse_edit_kind(config.wm_edit_kind);
    wm::GenerationConfig gen;
    gen.h = config.wm_h;
    gen.max_length = data::kHorizon;
    const wm::WmGenerator generator(net, gen);
    data::Dataset imaginary = wm::counterfactual_generate(
        generator, ds, kind, config.wm_per_goal,
        derive_seed(config.seed, {0x44ULL, static_cast<std::uint64_t>(kind)}));
    imaginary.manifest.seed = config.seed;
    imaginary.manifest.config_hash = hash;
    data::save(imaginary, paths.imaginary(config.wm_edit_kind));
}

void run_train_policy(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    const data::Dataset real = load_real(paths, hash);
    const bool mixed = config.data_ratio < 1.0;
    data::Dataset imaginary;
    std::vector<std::string> kinds;
    if (mixed) {
        const auto files = glob_middle(paths.root, "imaginary_", ".vlgor.jsonl");
        if (files.empty())
            throw std::runtime_error("missing artifact: " + paths.imaginary(config.wm_edit_kind) +
                                     " (run imagine first, or set data.ratio=1 for the baseline)");
        std::vector<data::Dataset> parts;
        for (const auto& [kind, path] : files) {
            parts.push_back(data::load(path));
            check_hash(path, parts.back().manifest.config_hash, hash);
            kinds.push_back(kind);
        }
        imaginary = data::merge(parts);
    }
    const std::string method = method_for(config.data_ratio, kinds);
    const data::MixedBatchSampler sampler{config.data_ratio, config.rl_batch};
    policy::TrainConfig tc;
    tc.epochs = config.rl_epochs;
    tc.batch = config.rl_batch;
    tc.seed = config.seed;
    tc.resolution = config.env_resolution;
    policy::TrainResult result =
        config.rl_algo == "bc"
            ? policy::train_bc(real, mixed ? &imaginary : nullptr, sampler, tc)
            : policy::train_cql(real, mixed ? &imaginary : nullptr, sampler, tc,
                                policy::CQLConfig{config.rl_alpha, config.rl_gamma, 200});
    std::vector<nn::ParamView<float>> params = result.net.params();
    std::ostringstream ratio_text;
    ratio_text.precision(17);
    ratio_text << config.data_ratio;
    const std::map<std::string, std::string> meta{
        {"config_hash", hash},          {"seed", std::to_string(config.seed)},
        {"algo", config.rl_algo},       {"method", method},
        {"ratio", ratio_text.str()},    {"resolution", std::to_string(config.env_resolution)}};
    ckpt::save_checkpoint(paths.policy_checkpoint(config.rl_algo), kPolicyArch, params, meta);
    policy::write_train_log(paths.train_log(config.rl_algo), result.logs, hash, config.seed);
}

void run_eval(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    require_file(paths.policy_checkpoint(config.rl_algo), "train-policy");
    policy::GoalConditionedNet net(config.env_resolution, 0);
    std::vector<nn::ParamView<float>> params = net.params();
    const std::map<std::string, std::string> meta =
        ckpt::load_checkpoint(paths.policy_checkpoint(config.rl_algo), kPolicyArch, params);
    if (!meta.count("config_hash"))
        throw std::runtime_error(paths.policy_checkpoint(config.rl_algo) +
                                 ": checkpoint has no config_hash metadata");
    check_hash(paths.policy_checkpoint(config.rl_algo), meta.at("config_hash"), hash);
    if (meta.count("resolution") && std::stoi(meta.at("resolution")) != config.env_resolution)
        throw std::runtime_error(paths.policy_checkpoint(config.rl_algo) +
                                 ": checkpoint resolution " + meta.at("resolution") +
                                 " does not match env.resolution " +
                                 std::to_string(config.env_resolution));
    const std::string method = meta.count("method") ? meta.at("method") : "unknown";
    require_file(paths.goals(config.eval_tier), "make-goals");
    const GoalsFile gf = read_goals_file(paths.goals(config.eval_tier));
    check_hash(paths.goals(config.eval_tier), gf.config_hash, hash);
    if (gf.instructions.empty())
        throw std::runtime_error(paths.goals(config.eval_tier) + ": no instructions");
    const double success =
        policy::evaluate(net, gf.instructions, config.eval_episodes_per_goal, config.eval_horizon,
                         derive_seed(config.seed, {0x55ULL}));
    const std::string out_path = paths.eval_csv(config.rl_algo, config.eval_tier);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
    out << "# config_hash=" << hash << "\n";
    out << "algo, tier, method, success_rate_pct, episodes, seed\n";
    out.precision(17);
    out << config.rl_algo << ", " << config.eval_tier << ", " << method << ", " << success << ", "
        << gf.instructions.size() * static_cast<std::size_t>(config.eval_episodes_per_goal) << ", "
        << config.seed << "\n";
    if (!out) throw std::runtime_error("failed writing " + out_path);
}

void run_quality(const cfg::RunConfig& config) {
    Paths paths(config.output_dir);
    fs::create_directories(paths.root);
    StageLock lock(paths.root);
    echo_config(paths, config);
    const std::string hash = cfg::config_hash(config);
    require_file(paths.goals("train"), "make-goals");
    const GoalsFile gf = read_goals_file(paths.goals("train"));
    check_hash(paths.goals("train"), gf.config_hash, hash);
    std::vector<metrics::HeldoutPair> pairs;
    for (std::size_t g = 0; g < gf.goals.size(); ++g) {
        for (int e = 0; e < config.eval_episodes_per_goal; ++e) {
            const lang::Instruction ins =
                lang::realize(gf.goals[g], e % lang::kTrainTemplates, "train");
            const env::BallState start = data::reset_unsatisfied(
                config.seed,
                {0x66ULL, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(e), 0ULL},
                gf.goals[g].view());
            Rng shake = Rng::derived(
                config.seed,
                {0x66ULL, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(e), 1ULL});
            pairs.push_back({data::expert_rollout(gf.goals[g], ins, start, shake), ins});
        }
    }
    const auto found = glob_middle(paths.root, "wm_budget", ".ckpt");
    std::vector<std::pair<int, std::string>> ckpts;
    for (const auto& [middle, path] : found) {
        try {
            std::size_t consumed = 0;
            const int budget = std::stoi(middle, &consumed);
            if (consumed == middle.size()) ckpts.emplace_back(budget, path);
        } catch (const std::exception&) {
        }
    }
    if (ckpts.empty())
        throw std::runtime_error("missing artifact: " +
                                 paths.wm_checkpoint(config.wm_budget.front()) +
                                 " (run train-wm first)");
    std::sort(ckpts.begin(), ckpts.end());
    std::vector<metrics::QualityRow> rows;
    for (const auto& [budget, path] : ckpts) {
        wm::WorldModelNet net(config.env_resolution, 0);
        load_wm_into(net, path, hash);
        wm::GenerationConfig gen;
        gen.h = config.wm_h;
        gen.max_length = data::kHorizon;
        const wm::WmGenerator generator(net, gen);
        rows.push_back(metrics::evaluate_quality(generator, pairs, budget, config.env_resolution,
                                                 config.seed));
    }
    metrics::write_quality_csv(paths.quality_csv(), rows, hash);
}

void run_report(const std::string& root) {
    if (!fs::is_directory(root))
        throw std::runtime_error("missing artifact: " + root + " is not a directory");
    StageLock lock(root);
    std::vector<std::string> dirs{root};
    {
        std::vector<std::string> subs;
        for (const fs::directory_entry& entry : fs::directory_iterator(root))
            if (entry.is_directory()) subs.push_back(entry.path().string());
        std::sort(subs.begin(), subs.end());
        dirs.insert(dirs.end(), subs.begin(), subs.end());
    }
    std::string merged_hash;
    std::string hash_source;
    const auto take_hash = [&](const std::string& h, const std::string& file) {
        if (merged_hash.empty()) {
            merged_hash = h;
            hash_source = file;
        } else if (h != merged_hash) {
            throw std::runtime_error("config-hash mismatch: " + file + " has '" + h + "' but " +
                                     hash_source + " has '" + merged_hash + "'");
        }
    };
    std::vector<EvalRow> eval_rows;
    std::vector<metrics::QualityRow> quality_rows;
    for (const std::string& dir : dirs) {
        for (const auto& [middle, path] : glob_middle(dir, "eval_", ".csv")) {
            std::string h;
            const std::vector<EvalRow> rows = read_eval_csv(path, &h);
            take_hash(h, path);
            eval_rows.insert(eval_rows.end(), rows.begin(), rows.end());
        }
        const std::string qpath = dir + "/quality.csv";
        if (fs::exists(qpath)) {
            std::string h;
            const std::vector<metrics::QualityRow> rows = metrics::read_quality_csv(qpath, &h);
            take_hash(h, qpath);
            quality_rows.insert(quality_rows.end(), rows.begin(), rows.end());
        }
    }
    if (eval_rows.empty()) throw std::runtime_error("no eval CSVs found under " + root);

    // Compose both reports fully before touching the filesystem so a missing
    // cell cannot leave a truncated file behind.
    const std::vector<std::string> kMethods{"baseline", "wo_target", "wo_behavior", "full"};
    const std::vector<std::string> kTiers{"rephrase", "counterfactual", "hard"};
    std::set<std::string> algos;
    for (const EvalRow& r : eval_rows) algos.insert(r.algo);

    std::ostringstream out;
    out << "# config_hash=" << merged_hash << "\n";
    out << "algo, method, tier, success_rate_pct, seeds\n";
    out.precision(17);
    for (const std::string& algo : algos) {
        for (const std::string& method : kMethods) {
            for (const std::string& tier : kTiers) {
                double sum = 0.0;
                int n = 0;
                for (const EvalRow& r : eval_rows) {
                    if (r.algo != algo || r.method != method || r.tier != tier) continue;
                    sum += r.success_rate_pct;
                    ++n;
                }
                if (n == 0)
                    throw std::runtime_error("missing ablation cell algo=" + algo +
                                             " method=" + method + " tier=" + tier);
                out << algo << ", " << method << ", " << tier << ", " << sum / n << ", " << n
                    << "\n";
            }
        }
    }

    std::stable_sort(quality_rows.begin(), quality_rows.end(),
                     [](const metrics::QualityRow& a, const metrics::QualityRow& b) {
                         return a.budget != b.budget ? a.budget < b.budget : a.seed < b.seed;
                     });
    std::ostringstream q;
    q << "# config_hash=" << merged_hash << "\n";
    q << "budget, psnr_db, ssim, med, success_rate_pct, seed\n";
    q.precision(17);
    for (const metrics::QualityRow& r : quality_rows) {
        q << r.budget << ", " << r.psnr_db << ", " << r.ssim << ", " << r.med << ", "
          << r.success_rate_pct << ", " << r.seed << "\n";
    }

    Paths paths(root);
    const auto dump = [](const std::string& path, const std::string& text) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + path + " for writing");
        f << text;
        if (!f) throw std::runtime_error("failed writing " + path);
    };
    dump(paths.report_ablation(), out.str());
    dump(paths.report_quality(), q.str());
}

}  // namespace vlgor::pipeline
