#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "deepsteg/error.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// A loss value together with the terms it is made of; total is always their sum.
struct LossReport {
    double total = 0.0;
    double cover_term = 0.0;
    std::vector<double> secret_terms;

    static LossReport from_terms(double cover, std::vector<double> secrets) {
        LossReport r;
        r.cover_term = cover;
        r.secret_terms = std::move(secrets);
        r.total = std::accumulate(r.secret_terms.begin(), r.secret_terms.end(), cover);
        return r;
    }

    double secret_sum() const {
        return std::accumulate(secret_terms.begin(), secret_terms.end(), 0.0);
    }

    bool finite() const {
        if (!std::isfinite(total) || !std::isfinite(cover_term)) return false;
        for (double s : secret_terms)
            if (!std::isfinite(s)) return false;
        return true;
    }

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Sum of squared differences over pixels and channels, averaged over the batch.
///
/// This is the training-loss convention; evaluation metrics use a per-element mean instead.
template <typename T>
double loss_sse(const Tensor<T>& target, const Tensor<T>& prediction) {
    require_same_shape(target.shape(), prediction.shape(), "loss_sse");
    double sum = 0.0;
    const T* a = target.data();
    const T* b = prediction.data();
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(target.shape().batch);
}

/// Gradient of weight * loss_sse(target, prediction) with respect to prediction.
template <typename T>
Tensor<T> loss_sse_grad(const Tensor<T>& target, const Tensor<T>& prediction, double weight) {
    require_same_shape(target.shape(), prediction.shape(), "loss_sse_grad");
    Tensor<T> g(prediction.shape());
    const T scale = static_cast<T>(2.0 * weight / static_cast<double>(target.shape().batch));
    for (std::size_t i = 0; i < g.size(); ++i)
        g.data()[i] = scale * (prediction.data()[i] - target.data()[i]);
    return g;
}

/// lambda_s * sum ||S - S'||^2 per image, averaged over the batch.
template <typename T>
double reveal_loss(const Tensor<T>& secret, const Tensor<T>& decoded, double lambda_s) {
    return lambda_s * loss_sse(secret, decoded);
}

/// lambda_c ||C - C'||^2 + sum_i lambda_s ||S_i - S_i'||^2, returned term by term.
template <typename T>
LossReport full_loss(const Tensor<T>& cover, const Tensor<T>& container,
                     const std::vector<Tensor<T>>& secrets, const std::vector<Tensor<T>>& decoded,
                     double lambda_c, double lambda_s) {
    if (secrets.size() != decoded.size())
        throw ShapeError("full_loss: " + std::to_string(secrets.size()) + " secrets but " +
                         std::to_string(decoded.size()) + " decoded images");
    std::vector<double> terms;
    terms.reserve(secrets.size());
    for (std::size_t i = 0; i < secrets.size(); ++i)
        terms.push_back(reveal_loss(secrets[i], decoded[i], lambda_s));
    return LossReport::from_terms(lambda_c * loss_sse(cover, container), std::move(terms));
}

} // namespace deepsteg
