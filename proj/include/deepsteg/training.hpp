#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "deepsteg/checkpoint.hpp"
#include "deepsteg/config.hpp"
#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/loss.hpp"
#include "deepsteg/network.hpp"
#include "deepsteg/optim.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// I.i.d. Gaussian(0, sigma^2) samples shaped like `shape`.
template <typename T>
Tensor<T> sample_noise(const Shape& shape, double sigma, std::mt19937_64& rng) {
    if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
    Tensor<T> n(shape);
    if (sigma == 0.0) return n;
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : n.values()) v = static_cast<T>(dist(rng));
    return n;
}

/// Element-wise additive Gaussian noise; no clamping. sigma = 0 returns the input unchanged.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x, double sigma, std::mt19937_64& rng) {
    if (sigma == 0.0) return x;
    Tensor<T> out = sample_noise<T>(x.shape(), sigma, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += x.data()[i];
    return out;
}

/// Parameters split into the two groups that are optimised separately.
enum class ParamGroup { encoder, decoder };

template <typename T>
std::vector<std::span<T>> group_spans(ModelParams<T>& m, ParamGroup group) {
    std::vector<std::span<T>> out;
    for (auto& v : param_views(m)) {
        const bool is_decoder = v.name.rfind("reveal.", 0) == 0;
        if (is_decoder == (group == ParamGroup::decoder)) out.push_back(v.values);
    }
    return out;
}

template <typename T>
std::vector<std::span<const T>> group_spans_const(ModelParams<T>& m, ParamGroup group) {
    std::vector<std::span<const T>> out;
    for (auto s : group_spans(m, group)) out.push_back(s);
    return out;
}

/// Full-model loss and, optionally, its gradients.
///
/// Runs the encoder (or reuses `trace`), adds `noise` (when non-null) to the container before
/// the reveal networks, and evaluates lambda_c ||C - C'||^2 on the noiseless container plus
/// lambda_s ||S_i - S_i'||^2 per decoder. Gradients flow through the reveal networks into the
/// encoder; they are accumulated into `grads` for the encoder group and/or the decoder group.
template <typename T>
LossReport full_loss_gradients(const ModelParams<T>& model, const StegoBatch<T>& batch,
                               const Tensor<T>* noise, double lambda_c, double lambda_s,
                               ModelParams<T>* grads, bool encoder_grads, bool decoder_grads,
                               const EncodeTrace<T>* trace = nullptr) {
    EncodeTrace<T> local;
    if (!trace) {
        encode_forward(model, batch, &local);
        trace = &local;
    }
    const Tensor<T>& container = trace->container();
    Tensor<T> noisy = container;
    if (noise) {
        require_same_shape(noise->shape(), container.shape(), "full_loss_gradients");
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy.data()[i] += noise->data()[i];
    }

    const std::size_t k = model.spec.k;
    std::vector<NetTrace<T>> reveal_traces(k);
    std::vector<Tensor<T>> decoded;
    for (std::size_t i = 0; i < k; ++i)
        decoded.push_back(reveal_forward(model.reveal[i], noisy, &reveal_traces[i]));
    LossReport report = full_loss(batch.cover, container, batch.secrets, decoded, lambda_c, lambda_s);

    if (!grads || (!encoder_grads && !decoder_grads)) return report;

    Tensor<T> d_container = loss_sse_grad(batch.cover, container, lambda_c);
    for (std::size_t i = 0; i < k; ++i) {
        auto d_dec = loss_sse_grad(batch.secrets[i], decoded[i], lambda_s);
        auto d_in = backprop_net(model.reveal[i], reveal_traces[i], std::move(d_dec),
                                 decoder_grads ? &grads->reveal[i] : nullptr, encoder_grads);
        if (encoder_grads)
            for (std::size_t j = 0; j < d_container.size(); ++j) d_container.data()[j] += d_in.data()[j];
    }
    if (!encoder_grads) return report;

    auto d_hidden_in = backprop_net(model.hiding, trace->hiding, std::move(d_container), &grads->hiding, true);
    const std::size_t img_c = model.spec.image_channels;
    const std::size_t feat_c = model.spec.aggregated_channels();
    for (std::size_t i = 0; i < k; ++i) {
        auto d_feat = slice_channels(d_hidden_in, img_c + i * feat_c, feat_c);
        backprop_net(model.prep[i], trace->prep[i], std::move(d_feat), &grads->prep[i], false);
    }
    return report;
}

namespace detail {

inline void require_finite(const LossReport& r, const char* step) {
    if (r.finite()) return;
    std::ostringstream os;
    os << step << ": non-finite loss (total=" << r.total << ", cover=" << r.cover_term << ", secrets=";
    for (std::size_t i = 0; i < r.secret_terms.size(); ++i) os << (i ? "," : "") << r.secret_terms[i];
    os << "); lower the learning rate or check the inputs";
    throw TrainingError(os.str());
}

} // namespace detail

/// One Adam step on every reveal network against its own secret term.
///
/// The noisy container is treated as a fixed input, so prep and hiding parameters are not
/// touched. The returned report has a zero cover term.
template <typename T>
LossReport train_step_reveal(ModelParams<T>& model, Adam<T>& decoder_opt, const StegoBatch<T>& batch,
                             const Tensor<T>& noisy_container, double lr, double lambda_s) {
    if (batch.k() != model.spec.k)
        throw ShapeError("train_step_reveal: batch carries " + std::to_string(batch.k()) +
                         " secrets, model expects " + std::to_string(model.spec.k));
    auto grads = make_model<T>(model.spec);
    std::vector<double> terms;
    for (std::size_t i = 0; i < model.spec.k; ++i) {
        NetTrace<T> trace;
        auto decoded = reveal_forward(model.reveal[i], noisy_container, &trace);
        terms.push_back(reveal_loss(batch.secrets[i], decoded, lambda_s));
        backprop_net(model.reveal[i], trace, loss_sse_grad(batch.secrets[i], decoded, lambda_s),
                     &grads.reveal[i], false);
    }
    auto report = LossReport::from_terms(0.0, std::move(terms));
    detail::require_finite(report, "reveal step");
    decoder_opt.step(group_spans(model, ParamGroup::decoder), group_spans_const(grads, ParamGroup::decoder), lr);
    return report;
}

/// One Adam step on the full loss for the prep and hiding networks.
///
/// Reveal networks are frozen: gradients pass through them to the container but their
/// parameters are not updated. `trace` may carry an encoder pass already run on `batch` with
/// the current parameters.
template <typename T>
LossReport train_step_full(ModelParams<T>& model, Adam<T>& encoder_opt, const StegoBatch<T>& batch,
                           const Tensor<T>* noise, double lr, double lambda_c, double lambda_s,
                           const EncodeTrace<T>* trace = nullptr) {
    auto grads = make_model<T>(model.spec);
    auto report = full_loss_gradients(model, batch, noise, lambda_c, lambda_s, &grads, true, false, trace);
    detail::require_finite(report, "full-model step");
    encoder_opt.step(group_spans(model, ParamGroup::encoder), group_spans_const(grads, ParamGroup::encoder), lr);
    return report;
}

/// Model plus the optimiser state of both parameter groups.
template <typename T>
class Trainer {
public:
    Trainer(ModelParams<T> model, double lambda_c, double lambda_s, double noise_std)
        : model_(std::move(model)), lambda_c_(lambda_c), lambda_s_(lambda_s), noise_std_(noise_std) {}

    /// encode -> add noise -> reveal step -> full step. Returns the full-step report.
    LossReport train_batch(const StegoBatch<T>& batch, double lr, std::mt19937_64& rng) {
        EncodeTrace<T> trace;
        const auto container = encode_forward(model_, batch, &trace);
        const auto noise = sample_noise<T>(container.shape(), noise_std_, rng);
        Tensor<T> noisy = container;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy.data()[i] += noise.data()[i];
        train_step_reveal(model_, decoder_opt_, batch, noisy, lr, lambda_s_);
        // The encoder is unchanged by the reveal step, so its trace is still valid.
        return train_step_full(model_, encoder_opt_, batch, &noise, lr, lambda_c_, lambda_s_, &trace);
    }

    ModelParams<T>& model() noexcept { return model_; }
    const ModelParams<T>& model() const noexcept { return model_; }
    Adam<T>& encoder_optimizer() noexcept { return encoder_opt_; }
    Adam<T>& decoder_optimizer() noexcept { return decoder_opt_; }

private:
    ModelParams<T> model_;
    double lambda_c_, lambda_s_, noise_std_;
    Adam<T> encoder_opt_;
    Adam<T> decoder_opt_;
};

/// Batch-size-weighted running mean of LossReports.
class LossAccumulator {
public:
    void add(const LossReport& r, std::size_t weight) {
        if (secrets_.empty()) secrets_.assign(r.secret_terms.size(), 0.0);
        cover_ += r.cover_term * static_cast<double>(weight);
        for (std::size_t i = 0; i < secrets_.size(); ++i)
            secrets_[i] += r.secret_terms[i] * static_cast<double>(weight);
        weight_ += weight;
    }
    LossReport mean() const {
        if (weight_ == 0) return {};
        const double w = static_cast<double>(weight_);
        std::vector<double> s(secrets_);
        for (auto& v : s) v /= w;
        return LossReport::from_terms(cover_ / w, std::move(s));
    }

private:
    double cover_ = 0.0;
    std::vector<double> secrets_;
    std::size_t weight_ = 0;
};

struct TrainOptions {
    /// Continue from this checkpoint (model, optimiser state, history, epoch counter).
    std::optional<Checkpoint> resume;
    /// Initial parameters when not resuming; drawn from init_params(spec, seed) otherwise.
    std::optional<ModelParams<float>> initial_model;
    /// When set, a checkpoint is written here every `config.checkpoint_every` epochs and at the end.
    std::filesystem::path checkpoint_path;
    std::function<void(std::size_t epoch, const LossReport&)> on_epoch;
};

/// Two-phase training loop.
///
/// Epochs [0, phase1_epochs) use phase1_batch; the following phase2_epochs use phase2_batch.
/// The epoch counter and the learning-rate schedule run continuously across both phases.
/// Batch order and container noise for epoch e depend only on (seed, e).
inline Checkpoint train(const TrainConfig& config, const TensorSplit& split, TrainOptions opts = {}) {
    config.validate();
    if (split.k() != config.k)
        throw ConfigError("split has " + std::to_string(split.k()) + " secret pools, config k=" +
                          std::to_string(config.k));
    if (split.pool_size() == 0) throw DatasetError("train: empty split");

    Checkpoint ckpt;
    ckpt.config = config;
    NetworkSpec spec;
    spec.k = config.k;
    ModelParams<float> model;
    if (opts.resume) {
        ckpt = std::move(*opts.resume);
        ckpt.config = config;
        model = std::move(ckpt.model);
        if (model.spec.k != config.k)
            throw CheckpointError("resume checkpoint has k=" + std::to_string(model.spec.k) +
                                  ", config k=" + std::to_string(config.k));
    } else if (opts.initial_model) {
        model = std::move(*opts.initial_model);
    } else {
        model = init_params<float>(spec, config.seed);
    }

    Trainer<float> trainer(std::move(model), config.lambda_c, config.lambda_s, config.noise_std);
    if (ckpt.encoder_optimizer) import_state(trainer.encoder_optimizer(), *ckpt.encoder_optimizer);
    if (ckpt.decoder_optimizer) import_state(trainer.decoder_optimizer(), *ckpt.decoder_optimizer);

    auto snapshot = [&](std::size_t epoch) {
        ckpt.model = trainer.model();
        ckpt.epoch = epoch;
        ckpt.encoder_optimizer = export_state(trainer.encoder_optimizer());
        ckpt.decoder_optimizer = export_state(trainer.decoder_optimizer());
    };

    const std::size_t total = config.total_epochs();
    for (std::size_t epoch = ckpt.epoch; epoch < total; ++epoch) {
        BatchIterator it(split, config.batch_size_at(epoch), config.seed, config.shuffle);
        it.start_epoch(epoch);
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(epoch), 0x6e6f6973u};
        std::mt19937_64 noise_rng(seq);
        const double lr = lr_schedule(epoch, config.lr_milestones);

        LossAccumulator acc;
        while (auto batch = it.next()) acc.add(trainer.train_batch(*batch, lr, noise_rng), batch->size());
        ckpt.history.push_back(acc.mean());
        if (opts.on_epoch) opts.on_epoch(epoch, ckpt.history.back());

        const bool last = epoch + 1 == total;
        if (!opts.checkpoint_path.empty() &&
            (last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0))) {
            snapshot(epoch + 1);
            save_checkpoint(ckpt, opts.checkpoint_path);
        }
    }
    snapshot(std::max(ckpt.epoch, total));
    return ckpt;
}

/// `epoch,total,cover_term,secret_1..secret_k`, one row per epoch.
inline void write_history_csv(const std::vector<LossReport>& history, std::size_t k, std::ostream& out) {
    out << "epoch,total,cover_term";
    for (std::size_t i = 1; i <= k; ++i) out << ",secret_" << i;
    out << '\n';
    out.precision(10);
    for (std::size_t e = 0; e < history.size(); ++e) {
        const auto& r = history[e];
        out << e << ',' << r.total << ',' << r.cover_term;
        for (double s : r.secret_terms) out << ',' << s;
        out << '\n';
    }
}

inline void write_history_csv(const std::vector<LossReport>& history, std::size_t k,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write history '" + path.string() + "'");
    write_history_csv(history, k, out);
}

} // namespace deepsteg
