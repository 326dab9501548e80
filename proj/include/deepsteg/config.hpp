#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/optim.hpp"

namespace deepsteg {

/// Training hyper-parameters. Defaults give the full two-phase run.
struct TrainConfig {
    std::size_t k = 3;
    double lambda_c = 1.0;
    double lambda_s = 1.0;
    double noise_std = 0.01;
    std::vector<Milestone> lr_milestones = default_milestones();
    std::size_t phase1_epochs = 750;
    std::size_t phase1_batch = 256;
    std::size_t phase2_epochs = 400;
    std::size_t phase2_batch = 32;
    std::uint64_t seed = 0;
    std::string data_root;
    std::size_t n_images = 2000;
    SplitMode split_mode = SplitMode::disjoint;
    bool shuffle = true;
    std::size_t checkpoint_every = 50;

    std::size_t total_epochs() const noexcept { return phase1_epochs + phase2_epochs; }
    std::size_t batch_size_at(std::size_t epoch) const noexcept {
        return epoch < phase1_epochs ? phase1_batch : phase2_batch;
    }

    void validate() const {
        if (k == 0) throw ConfigError("k must be at least 1");
        if (!(lambda_c > 0.0)) throw ConfigError("lambda_c must be positive");
        if (!(lambda_s > 0.0)) throw ConfigError("lambda_s must be positive");
        if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
        validate_milestones(lr_milestones);
        if (phase1_epochs > 0 && phase1_batch == 0) throw ConfigError("phase1_batch must be positive");
        if (phase2_epochs > 0 && phase2_batch == 0) throw ConfigError("phase2_batch must be positive");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Flat string map of `key = value` settings.
using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

template <typename Int>
Int parse_unsigned(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
    return static_cast<Int>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

} // namespace detail

/// Parses `key = value` lines; '#' starts a comment, blank lines are ignored.
inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        auto key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        kv[key] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    return parse_key_values(in, path.string());
}

/// Collects `<PREFIX><KEY>` environment variables for the given keys (key upper-cased).
inline KeyValues env_overrides(const std::vector<std::string>& keys, const std::string& prefix = "DEEPSTEG_") {
    KeyValues kv;
    for (const auto& key : keys) {
        std::string name = prefix + key;
        std::transform(name.begin(), name.end(), name.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        if (const char* v = std::getenv(name.c_str())) kv[key] = v;
    }
    return kv;
}

/// Layers key-value maps; later maps win.
inline KeyValues merge(std::initializer_list<KeyValues> layers) {
    KeyValues out;
    for (const auto& l : layers)
        for (const auto& [k, v] : l) out[k] = v;
    return out;
}

/// "0:0.001,200:0.0003,400:0.00003"
inline std::vector<Milestone> parse_milestones(const std::string& text) {
    std::vector<Milestone> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("lr_milestones entry '" + item + "' is not epoch:rate");
        out.push_back({detail::parse_unsigned<std::size_t>("lr_milestones", detail::trim(item.substr(0, colon))),
                       detail::parse_double("lr_milestones", detail::trim(item.substr(colon + 1)))});
    }
    validate_milestones(out);
    return out;
}

inline std::string format_milestones(const std::vector<Milestone>& ms) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < ms.size(); ++i) os << (i ? "," : "") << ms[i].epoch << ':' << ms[i].rate;
    return os.str();
}

inline const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys{
        "k", "lambda_c", "lambda_s", "noise_std", "lr_milestones", "phase1_epochs", "phase1_batch",
        "phase2_epochs", "phase2_batch", "seed", "data_root", "n_images", "split_mode", "shuffle",
        "checkpoint_every"};
    return keys;
}

/// Applies recognised keys onto `base`. Unknown keys are reported through `unknown`
/// when given, otherwise rejected.
inline TrainConfig apply_key_values(TrainConfig cfg, const KeyValues& kv,
                                    std::vector<std::string>* unknown = nullptr) {
    using namespace detail;
    for (const auto& [key, v] : kv) {
        if (key == "k") cfg.k = parse_unsigned<std::size_t>(key, v);
        else if (key == "lambda_c") cfg.lambda_c = parse_double(key, v);
        else if (key == "lambda_s") cfg.lambda_s = parse_double(key, v);
        else if (key == "noise_std") cfg.noise_std = parse_double(key, v);
        else if (key == "lr_milestones") cfg.lr_milestones = parse_milestones(v);
        else if (key == "phase1_epochs") cfg.phase1_epochs = parse_unsigned<std::size_t>(key, v);
        else if (key == "phase1_batch") cfg.phase1_batch = parse_unsigned<std::size_t>(key, v);
        else if (key == "phase2_epochs") cfg.phase2_epochs = parse_unsigned<std::size_t>(key, v);
        else if (key == "phase2_batch") cfg.phase2_batch = parse_unsigned<std::size_t>(key, v);
        else if (key == "seed") cfg.seed = parse_unsigned<std::uint64_t>(key, v);
        else if (key == "data_root") cfg.data_root = v;
        else if (key == "n_images") cfg.n_images = parse_unsigned<std::size_t>(key, v);
        else if (key == "split_mode") cfg.split_mode = parse_split_mode(v);
        else if (key == "shuffle") cfg.shuffle = parse_bool(key, v);
        else if (key == "checkpoint_every") cfg.checkpoint_every = parse_unsigned<std::size_t>(key, v);
        else if (unknown) unknown->push_back(key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline KeyValues to_key_values(const TrainConfig& c) {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {{"k", std::to_string(c.k)},
            {"lambda_c", num(c.lambda_c)},
            {"lambda_s", num(c.lambda_s)},
            {"noise_std", num(c.noise_std)},
            {"lr_milestones", format_milestones(c.lr_milestones)},
            {"phase1_epochs", std::to_string(c.phase1_epochs)},
            {"phase1_batch", std::to_string(c.phase1_batch)},
            {"phase2_epochs", std::to_string(c.phase2_epochs)},
            {"phase2_batch", std::to_string(c.phase2_batch)},
            {"seed", std::to_string(c.seed)},
            {"data_root", c.data_root},
            {"n_images", std::to_string(c.n_images)},
            {"split_mode", to_string(c.split_mode)},
            {"shuffle", c.shuffle ? "true" : "false"},
            {"checkpoint_every", std::to_string(c.checkpoint_every)}};
}

inline void write_key_values(const KeyValues& kv, std::ostream& out) {
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

} // namespace deepsteg
