#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "deepsteg/network.hpp"
#include "deepsteg/training.hpp"

namespace deepsteg {

/// (f(x + h) - f(x - h)) / 2h
template <typename F>
double central_difference(F&& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct GradProbe {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<GradProbe> probes;
};

struct GradCheckOptions {
    std::size_t probe_count = 50;
    /// The loss is piecewise quadratic in any single parameter, so central differences are
    /// exact between ReLU kinks. A larger h crosses more kinks: at 1e-3 a few of 50 probes on
    /// the full-width network typically land near one and report errors of 1e-3 to 1e-1.
    double h = 1e-5;
    std::uint64_t seed = 0;
    double lambda_c = 1.0;
    double lambda_s = 1.0;
    /// Multiplies the analytic gradient before comparison; only useful to test the checker.
    double analytic_scale = 1.0;
};

/// Compares analytic gradients of the noiseless full loss against central differences on
/// randomly chosen scalar parameters.
///
/// The relative error of a probe is |a - n| / max(|n|, floor) where the floor,
/// 1e3 * eps * max(1, |f|) / h, sits above the rounding noise of the difference quotient so
/// that parameters with a vanishing gradient do not report spurious errors.
inline GradCheckResult grad_check(ModelParams<double> model, const StegoBatch<double>& batch,
                                  const GradCheckOptions& opt = {}) {
    auto grads = make_model<double>(model.spec);
    const auto base = full_loss_gradients<double>(model, batch, nullptr, opt.lambda_c, opt.lambda_s, &grads, true, true);

    auto views = param_views(model);
    auto gviews = param_views(grads);
    std::vector<std::size_t> offsets{0};
    for (const auto& v : views) offsets.push_back(offsets.back() + v.values.size());
    const std::size_t total = offsets.back();

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> picks(total);
    std::iota(picks.begin(), picks.end(), 0);
    const std::size_t n = std::min(opt.probe_count, total);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, total - 1);
        std::swap(picks[i], picks[d(rng)]);
    }
    picks.resize(n);
    std::sort(picks.begin(), picks.end());

    const double eps = std::numeric_limits<double>::epsilon();
    const double floor = 1e3 * eps * std::max(1.0, std::abs(base.total)) / opt.h;

    GradCheckResult result;
    for (std::size_t flat : picks) {
        const auto t = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                                offsets.begin()) - 1;
        const std::size_t idx = flat - offsets[t];
        double& theta = views[t].values[idx];
        const double original = theta;
        auto f = [&](double x) {
            theta = x;
            return full_loss_gradients<double>(model, batch, nullptr, opt.lambda_c, opt.lambda_s, nullptr,
                                               false, false)
                .total;
        };
        const double numeric = central_difference(f, original, opt.h);
        theta = original;
        const double analytic = opt.analytic_scale * gviews[t].values[idx];
        const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), floor);
        result.probes.push_back({views[t].name, idx, analytic, numeric, rel});
        result.max_rel_error = std::max(result.max_rel_error, rel);
    }
    return result;
}

} // namespace deepsteg
