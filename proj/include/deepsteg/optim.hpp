#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "deepsteg/error.hpp"

namespace deepsteg {

/// Piecewise-constant schedule entry: `rate` applies from `epoch` until the next milestone.
struct Milestone {
    std::size_t epoch = 0;
    double rate = 0.0;

    friend bool operator==(const Milestone&, const Milestone&) = default;
};

inline std::vector<Milestone> default_milestones() {
    return {{0, 0.001}, {200, 0.0003}, {400, 0.00003}};
}

inline void validate_milestones(const std::vector<Milestone>& ms) {
    if (ms.empty()) throw ConfigError("learning-rate schedule has no milestones");
    if (ms.front().epoch != 0) throw ConfigError("first learning-rate milestone must start at epoch 0");
    for (std::size_t i = 0; i < ms.size(); ++i) {
        if (!(ms[i].rate > 0.0) || !std::isfinite(ms[i].rate))
            throw ConfigError("learning rates must be positive");
        if (i > 0 && ms[i].epoch <= ms[i - 1].epoch)
            throw ConfigError("learning-rate milestones must be strictly increasing");
    }
}

/// Rate of the last milestone whose start epoch is <= epoch (intervals are left-closed).
inline double lr_schedule(std::size_t epoch, const std::vector<Milestone>& milestones) {
    if (milestones.empty()) throw ConfigError("learning-rate schedule has no milestones");
    double rate = milestones.front().rate;
    for (const auto& m : milestones) {
        if (m.epoch > epoch) break;
        rate = m.rate;
    }
    return rate;
}

/// Adam with bias-corrected moments over a fixed list of parameter tensors.
template <typename T>
class Adam {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam() = default;
    explicit Adam(Options opt) : opt_(opt) {}

    /// Applies one update. The tensor list must be the same on every call.
    void step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
              double lr) {
        if (params.size() != grads.size()) throw Error("Adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), T(0));
                v_.emplace_back(p.size(), T(0));
            }
        }
        if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");

        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
        const T step = static_cast<T>(lr / c1);
        const T inv_c2 = static_cast<T>(1.0 / c2);
        const T eps = static_cast<T>(opt_.epsilon);
        for (std::size_t j = 0; j < params.size(); ++j) {
            auto p = params[j];
            auto g = grads[j];
            if (p.size() != g.size() || p.size() != m_[j].size())
                throw Error("Adam: tensor size changed between steps");
            T* m = m_[j].data();
            T* v = v_[j].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
            }
        }
    }

    std::uint64_t steps() const noexcept { return t_; }
    const Options& options() const noexcept { return opt_; }

    /// Moment buffers, exposed for checkpointing.
    std::vector<std::vector<T>>& first_moments() noexcept { return m_; }
    std::vector<std::vector<T>>& second_moments() noexcept { return v_; }
    const std::vector<std::vector<T>>& first_moments() const noexcept { return m_; }
    const std::vector<std::vector<T>>& second_moments() const noexcept { return v_; }
    void set_steps(std::uint64_t t) noexcept { t_ = t; }

private:
    Options opt_{};
    std::uint64_t t_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

} // namespace deepsteg
