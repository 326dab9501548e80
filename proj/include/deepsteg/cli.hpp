#pragma once

// Command-line front end: `deepsteg <subcommand> [flags]`.
//
// Every setting of a subcommand is a key (e.g. `noise_std`). Its value is resolved from, in
// decreasing priority: the flag (`--noise-std`), the environment (`DEEPSTEG_NOISE_STD`), the
// `key = value` file given by `--config`, and the built-in default. Exit codes: 0 success,
// 1 usage or configuration error, 2 runtime failure.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepsteg/checkpoint.hpp"
#include "deepsteg/codec.hpp"
#include "deepsteg/config.hpp"
#include "deepsteg/dataset.hpp"
#include "deepsteg/gradcheck.hpp"
#include "deepsteg/lsb.hpp"
#include "deepsteg/metrics.hpp"
#include "deepsteg/training.hpp"

namespace deepsteg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { ok = 0, usage = 1, failure = 2 };

namespace detail {

inline std::string flag_name(const std::string& key) {
    std::string f = "--" + key;
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

/// One subcommand: its declared keys, the raw flag values and the resolved settings.
class Command {
public:
    Command(CLI::App& parent, std::string name, std::string description)
        : app_(parent.add_subcommand(std::move(name), std::move(description))) {
        app_->add_option("--config", config_path_, "key = value settings file");
    }

    /// Declares a string-valued setting with a default ("" means unset).
    Command& key(const std::string& k, std::string fallback, const std::string& help) {
        keys_.push_back(k);
        defaults_[k] = std::move(fallback);
        app_->add_option(flag_name(k), flags_[k], help);
        return *this;
    }

    CLI::App* app() const noexcept { return app_; }
    bool chosen() const { return app_->parsed(); }

    /// flags > environment > config file > defaults
    KeyValues resolve(std::vector<std::string>* ignored = nullptr) const {
        KeyValues file;
        if (!config_path_.empty()) file = read_key_values(config_path_);
        KeyValues known_file;
        for (auto& [k, v] : file) {
            if (defaults_.count(k)) known_file[k] = v;
            else if (ignored) ignored->push_back(k);
        }
        KeyValues given;
        for (const auto& k : keys_)
            if (app_->count(flag_name(k)) > 0) given[k] = flags_.at(k);
        return merge({defaults_, known_file, env_overrides(keys_), given});
    }

    const std::string& config_path() const noexcept { return config_path_; }

private:
    CLI::App* app_;
    std::string config_path_;
    std::vector<std::string> keys_;
    KeyValues defaults_;
    std::map<std::string, std::string> flags_;
};

inline const std::string& need(const KeyValues& kv, const std::string& key) {
    const auto& v = kv.at(key);
    if (v.empty()) throw ConfigError("missing required setting '" + key + "' (" + flag_name(key) + ")");
    return v;
}

inline std::size_t as_size(const KeyValues& kv, const std::string& key) {
    return deepsteg::detail::parse_unsigned<std::size_t>(key, need(kv, key));
}

inline double as_double(const KeyValues& kv, const std::string& key) {
    return deepsteg::detail::parse_double(key, need(kv, key));
}

inline std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Resolved configuration, seeds and artifacts of one invocation.
struct Manifest {
    Manifest(std::string cmd, KeyValues kv) : command(std::move(cmd)), settings(std::move(kv)) {}

    std::string command;
    KeyValues settings;
    json extra = json::object();
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;

    void write(const fs::path& path) const {
        json j{{"command", command},
               {"created", timestamp()},
               {"settings", settings},
               {"artifacts", artifacts},
               {"warnings", warnings}};
        for (auto& [k, v] : extra.items()) j[k] = v;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path);
        if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
        out << j.dump(2) << '\n';
    }
};

inline void echo(const std::string& command, const KeyValues& kv, std::ostream& log) {
    log << "[" << command << "] resolved settings:\n";
    for (const auto& [k, v] : kv) log << "  " << k << " = " << v << '\n';
}

inline void warn_ignored(const std::vector<std::string>& ignored, std::ostream& log) {
    for (const auto& k : ignored) log << "warning: config key '" << k << "' does not apply here\n";
}

inline std::string format_report(const LossReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << "total " << r.total << "  cover " << r.cover_term;
    for (std::size_t i = 0; i < r.secret_terms.size(); ++i) os << "  s" << (i + 1) << ' ' << r.secret_terms[i];
    return os.str();
}

inline ModelParams<float> load_model(const KeyValues& kv, Manifest& m, std::optional<std::size_t> k = {}) {
    const auto path = need(kv, "model");
    auto ckpt = load_checkpoint(path, k);
    m.extra["checkpoint"] = {{"path", path}, {"k", ckpt.model.spec.k}, {"epoch", ckpt.epoch}};
    return std::move(ckpt.model);
}

inline int run_train(const Command& cmd, std::ostream& log) {
    std::vector<std::string> ignored;
    const auto kv = cmd.resolve(&ignored);
    warn_ignored(ignored, log);
    echo("train", kv, log);

    KeyValues train_kv;
    for (const auto& key : train_config_keys()) train_kv[key] = kv.at(key);
    const TrainConfig cfg = apply_key_values(TrainConfig{}, train_kv);
    const fs::path out_dir = need(kv, "out_dir");
    fs::create_directories(out_dir);

    Manifest m{"train", kv};
    DatasetSplit split;
    if (!kv.at("split").empty()) {
        split = read_split_manifest(kv.at("split"), cfg.data_root, cfg.split_mode);
    } else {
        if (cfg.data_root.empty()) throw ConfigError("train needs data_root (or a split manifest)");
        split = split_dataset(build_dataset(cfg.data_root, cfg.n_images, cfg.seed), cfg.k, cfg.split_mode);
    }
    const auto split_path = out_dir / "split.tsv";
    write_split_manifest(split, split_path);
    auto tensors = load_split(split, &m.warnings);
    for (const auto& w : m.warnings) log << "warning: " << w << '\n';

    TrainOptions opts;
    opts.checkpoint_path = out_dir / "model.ckpt";
    if (!kv.at("resume").empty()) opts.resume = load_checkpoint(kv.at("resume"), cfg.k);
    opts.on_epoch = [&](std::size_t epoch, const LossReport& r) {
        log << "epoch " << (epoch + 1) << '/' << cfg.total_epochs() << "  lr "
            << lr_schedule(epoch, cfg.lr_milestones) << "  " << format_report(r) << '\n';
    };
    const auto ckpt = train(cfg, tensors, std::move(opts));
    save_checkpoint(ckpt, out_dir / "model.ckpt");
    write_history_csv(ckpt.history, cfg.k, out_dir / "history.csv");

    m.extra["seeds"] = {{"init", cfg.seed}, {"data", cfg.seed}, {"noise", cfg.seed}};
    m.extra["pool_size"] = tensors.pool_size();
    m.extra["epochs_completed"] = ckpt.epoch;
    if (!ckpt.history.empty()) m.extra["final_loss"] = deepsteg::detail::report_to_json(ckpt.history.back());
    m.artifacts = {(out_dir / "model.ckpt").string(), (out_dir / "history.csv").string(), split_path.string()};
    m.write(out_dir / "manifest.json");
    return ok;
}

inline int run_encode(const Command& cmd, const std::vector<std::string>& secrets, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("encode", kv, log);
    Manifest m{"encode", kv};
    m.extra["secrets"] = secrets;
    const auto model = load_model(kv, m);
    const fs::path out = need(kv, "out");
    const QuantPolicy policy{parse_quant_mode(kv.at("quant"))};
    std::vector<fs::path> secret_paths(secrets.begin(), secrets.end());

    ImageTensor container;
    const auto s = encode_file(model, need(kv, "cover"), secret_paths, out, policy, &container);
    for (const auto& w : s.warnings) log << "warning: " << w << '\n';
    m.warnings = s.warnings;
    m.artifacts.push_back(out.string());
    m.extra["distortion"] = {{"mse_pre_quantization", s.mse_pre}, {"mse_post_quantization", s.mse_post},
                             {"sse_pre_quantization", s.sse_pre}, {"sse_post_quantization", s.sse_post}};
    log << "cover vs container MSE: " << s.mse_pre << " (float), " << s.mse_post << " (" << to_string(policy.mode)
        << ")\n";

    if (const auto gain = as_double(kv, "diff_gain"); gain > 0) {
        const auto cover = load_image(need(kv, "cover"));
        const auto path = diff_image_path(out, gain);
        save_image(diff_image(cover, apply_policy(container, policy), gain), path);
        m.artifacts.push_back(path.string());
    }
    m.write(fs::path(out.string() + ".manifest.json"));
    return ok;
}

inline int run_decode(const Command& cmd, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("decode", kv, log);
    Manifest m{"decode", kv};
    const auto model = load_model(kv, m);
    const fs::path out_dir = need(kv, "out_dir");
    for (const auto& p : decode_file(model, need(kv, "container"), out_dir, &m.warnings)) {
        log << "wrote " << p.string() << '\n';
        m.artifacts.push_back(p.string());
    }
    m.write(out_dir / "manifest.json");
    return ok;
}

inline int run_evaluate(const Command& cmd, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("evaluate", kv, log);
    Manifest m{"evaluate", kv};
    const auto model = load_model(kv, m);
    const std::size_t k = model.spec.k;
    const auto seed = deepsteg::detail::parse_unsigned<std::uint64_t>("seed", need(kv, "seed"));
    const auto mode = parse_split_mode(kv.at("split_mode"));
    DatasetSplit split;
    if (!kv.at("split").empty())
        split = read_split_manifest(kv.at("split"), kv.at("data_root"), mode);
    else
        split = split_dataset(build_dataset(need(kv, "data_root"), as_size(kv, "n_images"), seed), k, mode);
    const auto tensors = load_split(split, &m.warnings);

    const fs::path out_dir = need(kv, "out_dir");
    fs::create_directories(out_dir);
    const auto report = evaluate_dataset(model, tensors, as_size(kv, "samples"), seed, need(kv, "model"));
    write_eval_files(report, out_dir / "eval.csv", out_dir / "eval.json");
    m.artifacts = {(out_dir / "eval.csv").string(), (out_dir / "eval.json").string()};
    m.extra["seeds"] = {{"sampling", seed}};
    for (std::size_t role = 0; role < report.summary.size(); ++role)
        log << EvalReport::role_name(role) << ": mean MSE " << report.summary[role].mse.mean << ", mean PSNR "
            << report.summary[role].psnr.mean << " dB, mean SSIM " << report.summary[role].ssim.mean << '\n';

    if (const auto gain = as_double(kv, "diff_gain"); gain > 0 && tensors.pool_size() > 0) {
        // Residue images for the first sampled tuple.
        const std::size_t idx = report.rows.front().sample;
        StegoBatch<float> one;
        one.cover = *tensors.cover[idx];
        for (const auto& pool : tensors.secrets) one.secrets.push_back(*pool[idx]);
        const auto container = encode_forward(model, one);
        const auto decoded = decode_all(model, container);
        auto put = [&](const ImageTensor& a, const ImageTensor& b, const std::string& stem) {
            const auto path = diff_image_path(out_dir / (stem + ".png"), gain);
            save_image(diff_image(a, b, gain), path);
            m.artifacts.push_back(path.string());
        };
        put(one.cover, container, "cover");
        for (std::size_t i = 0; i < k; ++i) put(one.secrets[i], decoded[i], "secret_" + std::to_string(i + 1));
    }
    m.write(out_dir / "manifest.json");
    return ok;
}

inline LsbPlan lsb_plan(const KeyValues& kv, std::size_t k) {
    if (kv.at("bits_per_secret").empty()) return LsbPlan::even_split(k);
    LsbPlan p{k, as_size(kv, "bits_per_secret")};
    p.validate();
    return p;
}

inline int run_lsb_encode(const Command& cmd, const std::vector<std::string>& secrets, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("lsb-encode", kv, log);
    if (secrets.empty()) throw ConfigError("lsb-encode needs at least one --secret");
    Manifest m{"lsb-encode", kv};
    m.extra["secrets"] = secrets;
    const auto plan = lsb_plan(kv, secrets.size());
    const auto cover = load_image8(need(kv, "cover"), &m.warnings);
    std::vector<Image8> imgs;
    for (const auto& s : secrets) imgs.push_back(load_image8(s, &m.warnings));
    const fs::path out = need(kv, "out");
    save_image8(lsb_embed(cover, imgs, plan), out);
    m.extra["plan"] = {{"k", plan.k}, {"bits_per_secret", plan.bits_per_secret},
                       {"cover_bits_kept", plan.cover_bits_kept()}};
    m.artifacts.push_back(out.string());
    log << "embedded " << plan.k << " secret(s), " << plan.bits_per_secret << " bit(s) each\n";
    m.write(fs::path(out.string() + ".manifest.json"));
    return ok;
}

inline int run_lsb_decode(const Command& cmd, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("lsb-decode", kv, log);
    Manifest m{"lsb-decode", kv};
    const auto plan = lsb_plan(kv, as_size(kv, "k"));
    const auto container = load_image8(need(kv, "container"), &m.warnings);
    const fs::path out_dir = need(kv, "out_dir");
    fs::create_directories(out_dir);
    const auto secrets = lsb_extract(container, plan);
    for (std::size_t i = 0; i < secrets.size(); ++i) {
        const auto path = out_dir / ("secret_" + std::to_string(i + 1) + ".png");
        save_image8(secrets[i], path);
        m.artifacts.push_back(path.string());
        log << "wrote " << path.string() << '\n';
    }
    m.write(out_dir / "manifest.json");
    return ok;
}

/// Random tiny model and batch in double precision, checked against finite differences.
inline int run_grad_check(const Command& cmd, std::ostream& log) {
    const auto kv = cmd.resolve();
    echo("grad-check", kv, log);
    NetworkSpec spec;
    spec.k = as_size(kv, "k");
    const auto seed = deepsteg::detail::parse_unsigned<std::uint64_t>("seed", need(kv, "seed"));
    const auto side = as_size(kv, "size");
    const auto model = init_params<double>(spec, seed);

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto image = [&] {
        Tensor<double> t(Shape{1, side, side, 3});
        for (auto& v : t.values()) v = u(rng);
        return t;
    };
    StegoBatch<double> batch;
    batch.cover = image();
    for (std::size_t i = 0; i < spec.k; ++i) batch.secrets.push_back(image());

    GradCheckOptions opt;
    opt.probe_count = as_size(kv, "probes");
    opt.h = as_double(kv, "step");
    opt.seed = seed;
    const auto result = grad_check(model, batch, opt);
    const double tolerance = as_double(kv, "tolerance");
    log << "max relative error " << result.max_rel_error << " over " << result.probes.size() << " probes (tolerance "
        << tolerance << ")\n";

    if (!kv.at("out_dir").empty()) {
        Manifest m{"grad-check", kv};
        m.extra["seeds"] = {{"model", seed}};
        m.extra["max_rel_error"] = result.max_rel_error;
        json probes = json::array();
        for (const auto& p : result.probes)
            probes.push_back({{"param", p.param}, {"index", p.index}, {"analytic", p.analytic},
                              {"numeric", p.numeric}, {"rel_error", p.rel_error}});
        m.extra["probes"] = probes;
        m.write(fs::path(kv.at("out_dir")) / "manifest.json");
    }
    return result.max_rel_error < tolerance ? ok : failure;
}

} // namespace detail

/// Parses argv and runs the chosen subcommand. Diagnostics go to `log`, usage errors to `err`.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    using detail::Command;
    CLI::App app{"Hide k secret images inside one cover image with trained convolutional networks."};
    app.name("deepsteg");
    app.require_subcommand(1);

    const TrainConfig defaults;
    const auto dflt = to_key_values(defaults);
    Command train(app, "train", "train prep/hiding/reveal networks on an image folder");
    for (const auto& key : train_config_keys()) train.key(key, dflt.at(key), "training setting '" + key + "'");
    train.key("out_dir", "run", "directory for model.ckpt, history.csv, split.tsv, manifest.json")
        .key("split", "", "reuse a split manifest (pool<TAB>relative path) instead of sampling")
        .key("resume", "", "continue from a checkpoint");

    std::vector<std::string> secrets;
    Command encode(app, "encode", "hide secrets in a cover with a trained checkpoint");
    encode.key("model", "", "checkpoint").key("cover", "", "cover image").key("out", "", "container PNG")
        .key("quant", "quantize-8bit", "quantize-8bit | float-passthrough")
        .key("diff_gain", "0", "also write an amplified cover/container residue (0 = off)");
    encode.app()->add_option("--secret", secrets, "secret image; repeat once per reveal network, in order");

    Command decode(app, "decode", "recover the secrets from a container");
    decode.key("model", "", "checkpoint").key("container", "", "container PNG (64x64)")
        .key("out_dir", "", "directory receiving secret_1.png .. secret_k.png");

    Command evaluate(app, "evaluate", "MSE/PSNR/SSIM report over sampled tuples");
    evaluate.key("model", "", "checkpoint").key("data_root", "", "image folder (class subdirectories)")
        .key("n_images", dflt.at("n_images"), "images drawn from data_root")
        .key("split", "", "split manifest to evaluate instead of sampling")
        .key("split_mode", dflt.at("split_mode"), "disjoint | shared_secret")
        .key("samples", "100", "tuples to evaluate").key("seed", "0", "sampling seed")
        .key("out_dir", "eval", "directory for eval.csv, eval.json, manifest.json")
        .key("diff_gain", "0", "write residue images of the first tuple at this gain (0 = off)");

    std::vector<std::string> lsb_secrets;
    Command lsb_encode(app, "lsb-encode", "classical bit-plane embedding baseline");
    lsb_encode.key("cover", "", "cover image").key("out", "", "container PNG")
        .key("bits_per_secret", "", "bits per secret (default: 8 / (k + 1))");
    lsb_encode.app()->add_option("--secret", lsb_secrets, "secret image; repeat per secret, in order");

    Command lsb_decode(app, "lsb-decode", "extract bit-plane secrets");
    lsb_decode.key("container", "", "container PNG").key("k", "", "number of secrets")
        .key("bits_per_secret", "", "bits per secret (default: 8 / (k + 1))")
        .key("out_dir", "", "directory receiving secret_1.png .. secret_k.png");

    Command grad(app, "grad-check", "finite-difference check of the analytic gradients");
    grad.key("k", "2", "secrets").key("size", "8", "image side").key("probes", "50", "parameters probed")
        .key("step", "1e-5", "finite-difference step h").key("seed", "0", "model and probe seed")
        .key("tolerance", "1e-4", "exit 2 when the max relative error reaches this")
        .key("out_dir", "", "write a manifest with every probe here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, log, err);
        return code == 0 ? ok : usage;
    }

    try {
        if (train.chosen()) return detail::run_train(train, log);
        if (encode.chosen()) return detail::run_encode(encode, secrets, log);
        if (decode.chosen()) return detail::run_decode(decode, log);
        if (evaluate.chosen()) return detail::run_evaluate(evaluate, log);
        if (lsb_encode.chosen()) return detail::run_lsb_encode(lsb_encode, lsb_secrets, log);
        if (lsb_decode.chosen()) return detail::run_lsb_decode(lsb_decode, log);
        if (grad.chosen()) return detail::run_grad_check(grad, log);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return failure;
    }
    err << app.help();
    return usage;
}

} // namespace deepsteg::cli
