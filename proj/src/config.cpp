#include "vlgor/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vlgor::cfg {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    std::size_t consumed = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &consumed);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "': not an integer: '" + value + "'");
    }
    if (consumed != value.size())
        throw std::invalid_argument("config: key '" + key + "': not an integer: '" + value + "'");
    return v;
}

double parse_real(const std::string& key, const std::string& value) {
    std::size_t consumed = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &consumed);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "': not a number: '" + value + "'");
    }
    if (consumed != value.size())
        throw std::invalid_argument("config: key '" + key + "': not a number: '" + value + "'");
    return v;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    }
    if (out.empty())
        throw std::invalid_argument("config: key '" + key + "': empty list");
    return out;
}

std::string join(const std::vector<int>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out << ",";
        out << v[i];
    }
    return out.str();
}

std::string format_real(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "seed") {
        c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "env.resolution") {
        c.env_resolution = static_cast<int>(parse_int(key, value));
    } else if (key == "data.train_goal_fraction") {
        c.data_train_goal_fraction = parse_real(key, value);
    } else if (key == "data.episodes_per_goal") {
        c.data_episodes_per_goal = static_cast<int>(parse_int(key, value));
    } else if (key == "data.ratio") {
        c.data_ratio = parse_real(key, value);
    } else if (key == "wm.budget") {
        c.wm_budget = parse_int_list(key, value);
    } else if (key == "wm.h") {
        c.wm_h = static_cast<int>(parse_int(key, value));
    } else if (key == "wm.epochs") {
        c.wm_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "wm.per_goal") {
        c.wm_per_goal = static_cast<int>(parse_int(key, value));
    } else if (key == "wm.edit_kind") {
        c.wm_edit_kind = value;
    } else if (key == "rl.algo") {
        c.rl_algo = value;
    } else if (key == "rl.alpha") {
        c.rl_alpha = parse_real(key, value);
    } else if (key == "rl.gamma") {
        c.rl_gamma = parse_real(key, value);
    } else if (key == "rl.epochs") {
        c.rl_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "rl.batch") {
        c.rl_batch = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.tier") {
        c.eval_tier = value;
    } else if (key == "eval.episodes_per_goal") {
        c.eval_episodes_per_goal = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.horizon") {
        c.eval_horizon = static_cast<int>(parse_int(key, value));
    } else if (key == "output_dir") {
        c.output_dir = value;
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig c;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: " + path + ":" + std::to_string(line_no) +
                                     ": expected key=value");
        try {
            apply_override(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return c;
}

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig c = config_path.empty() ? RunConfig{} : parse_file(config_path);
    for (const std::string& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: override '" + item + "' is not key=value");
        apply_override(c, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
    validate(c);
    return c;
}

void validate(const RunConfig& c) {
    const auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (c.env_resolution < 16) fail("env.resolution must be >= 16");
    if (c.data_train_goal_fraction <= 0.0 || c.data_train_goal_fraction > 1.0)
        fail("data.train_goal_fraction must be in (0,1]");
    if (c.data_episodes_per_goal < 1) fail("data.episodes_per_goal must be >= 1");
    if (c.data_ratio <= 0.0 || c.data_ratio > 1.0) fail("data.ratio must be in (0,1]");
    for (int b : c.wm_budget)
        if (b < 1) fail("wm.budget entries must be >= 1");
    if (c.wm_h < 1) fail("wm.h must be >= 1");
    if (c.wm_epochs < 0) fail("wm.epochs must be >= 0");
    if (c.wm_per_goal < 1) fail("wm.per_goal must be >= 1");
    if (c.wm_edit_kind != "target" && c.wm_edit_kind != "behavior" && c.wm_edit_kind != "both")
        fail("wm.edit_kind must be target|behavior|both");
    if (c.rl_algo != "bc" && c.rl_algo != "cql") fail("rl.algo must be bc|cql");
    if (c.rl_alpha < 0.0) fail("rl.alpha must be >= 0");
    if (c.rl_gamma < 0.0 || c.rl_gamma >= 1.0) fail("rl.gamma must be in [0,1)");
    if (c.rl_epochs < 1) fail("rl.epochs must be >= 1");
    if (c.rl_batch < 1) fail("rl.batch must be >= 1");
    if (c.eval_tier != "train" && c.eval_tier != "rephrase" && c.eval_tier != "counterfactual" &&
        c.eval_tier != "hard")
        fail("eval.tier must be train|rephrase|counterfactual|hard");
    if (c.eval_episodes_per_goal < 1) fail("eval.episodes_per_goal must be >= 1");
    if (c.eval_horizon < 1) fail("eval.horizon must be >= 1");
    if (c.output_dir.empty()) fail("output_dir must not be empty");
}

std::string to_text(const RunConfig& c) {
    std::ostringstream out;
    out << "seed=" << c.seed << "\n";
    out << "env.resolution=" << c.env_resolution << "\n";
    out << "data.train_goal_fraction=" << format_real(c.data_train_goal_fraction) << "\n";
    out << "data.episodes_per_goal=" << c.data_episodes_per_goal << "\n";
    out << "data.ratio=" << format_real(c.data_ratio) << "\n";
    out << "wm.budget=" << join(c.wm_budget) << "\n";
    out << "wm.h=" << c.wm_h << "\n";
    out << "wm.epochs=" << c.wm_epochs << "\n";
    out << "wm.per_goal=" << c.wm_per_goal << "\n";
    out << "wm.edit_kind=" << c.wm_edit_kind << "\n";
    out << "rl.algo=" << c.rl_algo << "\n";
    out << "rl.alpha=" << format_real(c.rl_alpha) << "\n";
    out << "rl.gamma=" << format_real(c.rl_gamma) << "\n";
    out << "rl.epochs=" << c.rl_epochs << "\n";
    out << "rl.batch=" << c.rl_batch << "\n";
    out << "eval.tier=" << c.eval_tier << "\n";
    out << "eval.episodes_per_goal=" << c.eval_episodes_per_goal << "\n";
    out << "eval.horizon=" << c.eval_horizon << "\n";
    out << "output_dir=" << c.output_dir << "\n";
    return out.str();
}

std::string config_hash(const RunConfig& c) {
    // Matrix axes and per-run fields stay out of the hash; everything else
    // must match for two artifacts to belong to the same experiment.
    std::ostringstream material;
    material << "env.resolution=" << c.env_resolution << "\n";
    material << "data.train_goal_fraction=" << format_real(c.data_train_goal_fraction) << "\n";
    material << "data.episodes_per_goal=" << c.data_episodes_per_goal << "\n";
    material << "wm.budget=" << join(c.wm_budget) << "\n";
    material << "wm.h=" << c.wm_h << "\n";
    material << "wm.epochs=" << c.wm_epochs << "\n";
    material << "wm.per_goal=" << c.wm_per_goal << "\n";
    material << "rl.alpha=" << format_real(c.rl_alpha) << "\n";
    material << "rl.gamma=" << format_real(c.rl_gamma) << "\n";
    material << "rl.epochs=" << c.rl_epochs << "\n";
    material << "rl.batch=" << c.rl_batch << "\n";
    material << "eval.episodes_per_goal=" << c.eval_episodes_per_goal << "\n";
    material << "eval.horizon=" << c.eval_horizon << "\n";
    const std::string text = material.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

}  // namespace vlgor::cfg
