#include "pdectrl/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "pdectrl/errors.hpp"

namespace pdectrl {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"problem",
         {"kind", "resolution", "alpha", "ud", "wave_speed", "T", "nt", "cfl", "nu", "dt",
          "substeps"}},
        {"phase1",
         {"mode", "lr", "weight_decay", "sched_step", "sched_factor", "lambda1", "epochs",
          "batch", "seed", "latent", "kernel", "enc_channels", "dec_channels", "hidden",
          "latent_channels", "transition_kernel", "n_train", "n_test", "n_traj_train",
          "n_traj_test", "steps", "max_freq", "target_metric", "snapshot_epochs", "eval_every",
          "w_latent", "w_state", "w_state_rec", "w_control_rec"}},
        {"phase2",
         {"lambda2", "lr", "memory", "c1", "c2", "max_iters", "tolerance_change", "m_init",
          "jobj_weight", "jrec_weight", "bound_lo", "bound_hi"}},
        {"compare", {"samples", "repeats", "inits", "seed"}},
        {"paths", {"data", "checkpoint", "out"}},
    };
    return s;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set_checked(const std::string& section, const std::string& key,
                            const std::string& value) {
    auto sec = schema().find(section);
    if (sec == schema().end()) throw ConfigError("unknown config section [" + section + "]");
    if (!sec->second.count(key))
        throw ConfigError("unknown config key '" + section + "." + key + "'");
    data_[section][key] = value;
}

RunConfig RunConfig::from_string(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!schema().count(section))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside any section");
        cfg.set_checked(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
}

void RunConfig::apply_override(const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    std::string lhs = trim(assignment.substr(0, eq));
    size_t dot = lhs.find('.');
    if (dot == std::string::npos)
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    set_checked(lhs.substr(0, dot), lhs.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
}

std::string RunConfig::get_str(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    auto s = data_.find(section);
    if (s == data_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

std::string RunConfig::require(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw ConfigError("missing required config key '" + section + "." + key + "'");
    return data_.at(section).at(key);
}

double RunConfig::get_f64(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = data_.at(section).at(key);
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + section + "." + key + "': '" + v + "' is not a number");
    }
}

int RunConfig::get_int(const std::string& section, const std::string& key, int fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = data_.at(section).at(key);
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + section + "." + key + "': '" + v + "' is not an integer");
    }
}

std::vector<double> RunConfig::get_f64_list(const std::string& section, const std::string& key,
                                            std::vector<double> fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = data_.at(section).at(key);
    std::vector<double> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            throw ConfigError("config key '" + section + "." + key + "': bad list element '" + tok + "'");
        }
    }
    return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& section, const std::string& key,
                                         std::vector<int> fallback) const {
    if (!has(section, key)) return fallback;
    auto f = get_f64_list(section, key, {});
    std::vector<int> out;
    out.reserve(f.size());
    for (double x : f) out.push_back(static_cast<int>(x));
    return out;
}

std::string RunConfig::kind() const {
    std::string k = require("problem", "kind");
    if (k != "poisson" && k != "wave" && k != "burgers")
        throw ConfigError("problem.kind must be poisson, wave or burgers, got '" + k + "'");
    return k;
}

}  // namespace pdectrl
