#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/network.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// PSNR of identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// Mean of squared element differences (the evaluation convention; training sums instead).
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mse");
    if (a.empty()) throw ShapeError("mse: empty tensors");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double max_value = 1.0) {
    if (mse_value <= 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(max_value * max_value / mse_value);
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_value = 1.0) {
    return psnr_from_mse(mse(a, b), max_value);
}

struct SsimOptions {
    std::size_t window = 8; // non-overlapping square windows
    double max_value = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

namespace detail {

/// Channel-mean grayscale of image n, row-major.
template <typename T>
std::vector<double> grayscale(const Tensor<T>& t, std::size_t n) {
    const Shape& s = t.shape();
    std::vector<double> g(s.height * s.width, 0.0);
    auto img = t.image(n);
    for (std::size_t p = 0; p < g.size(); ++p) {
        double acc = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) acc += static_cast<double>(img[p * s.channels + c]);
        g[p] = acc / static_cast<double>(s.channels);
    }
    return g;
}

} // namespace detail

/// Structural similarity over non-overlapping windows of the channel-mean grayscale image,
/// averaged over windows and then over the batch. Images smaller than a window are treated
/// as a single window.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    const Shape& s = a.shape();
    if (a.empty()) throw ShapeError("ssim: empty tensors");
    const double c1 = (opt.k1 * opt.max_value) * (opt.k1 * opt.max_value);
    const double c2 = (opt.k2 * opt.max_value) * (opt.k2 * opt.max_value);
    const std::size_t wy = std::min(opt.window, s.height);
    const std::size_t wx = std::min(opt.window, s.width);
    const std::size_t ny = s.height / wy, nx = s.width / wx;

    double total = 0.0;
    for (std::size_t n = 0; n < s.batch; ++n) {
        const auto ga = detail::grayscale(a, n);
        const auto gb = detail::grayscale(b, n);
        double sum = 0.0;
        for (std::size_t by = 0; by < ny; ++by) {
            for (std::size_t bx = 0; bx < nx; ++bx) {
                double ma = 0, mb = 0;
                for (std::size_t y = by * wy; y < (by + 1) * wy; ++y)
                    for (std::size_t x = bx * wx; x < (bx + 1) * wx; ++x) {
                        ma += ga[y * s.width + x];
                        mb += gb[y * s.width + x];
                    }
                const double count = static_cast<double>(wy * wx);
                ma /= count;
                mb /= count;
                double va = 0, vb = 0, cov = 0;
                for (std::size_t y = by * wy; y < (by + 1) * wy; ++y)
                    for (std::size_t x = bx * wx; x < (bx + 1) * wx; ++x) {
                        const double da = ga[y * s.width + x] - ma;
                        const double db = gb[y * s.width + x] - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= count;
                vb /= count;
                cov /= count;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += sum / static_cast<double>(ny * nx);
    }
    return total / static_cast<double>(s.batch);
}

/// clamp(|a - b| * gain, 0, 1), for visualising embedding residue.
template <typename T>
Tensor<T> diff_image(const Tensor<T>& a, const Tensor<T>& b, double gain) {
    require_same_shape(a.shape(), b.shape(), "diff_image");
    if (!(gain >= 1.0)) throw ConfigError("diff_image: gain must be >= 1");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])) * gain;
        out.data()[i] = static_cast<T>(std::clamp(d, 0.0, 1.0));
    }
    return out;
}

/// `<dir>/<stem>_diff_gain<g>.png`
inline std::filesystem::path diff_image_path(const std::filesystem::path& base, double gain) {
    std::ostringstream g;
    g << gain;
    auto name = base.stem().string() + "_diff_gain" + g.str() + ".png";
    return base.parent_path() / name;
}

struct PairMetrics {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

template <typename T>
PairMetrics pair_metrics(const Tensor<T>& reference, const Tensor<T>& test) {
    PairMetrics m;
    m.mse = mse(reference, test);
    m.psnr = psnr_from_mse(m.mse);
    m.ssim = ssim(reference, test);
    return m;
}

struct EvalRow {
    std::size_t sample = 0;      // tuple index within the split
    std::size_t role = 0;        // 0 = cover vs container, i = secret i vs decoded i
    PairMetrics metrics;
};

struct MetricSummary {
    double mean = 0.0;
    double median = 0.0;
};

struct RoleSummary {
    MetricSummary mse, psnr, ssim;
};

struct EvalReport {
    std::size_t k = 0;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::vector<EvalRow> rows;
    std::vector<RoleSummary> summary; // index = role

    static std::string role_name(std::size_t role) {
        return role == 0 ? "cover" : "secret_" + std::to_string(role);
    }
};

namespace detail {

inline MetricSummary summarize(std::vector<double> v) {
    MetricSummary s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    return s;
}

} // namespace detail

/// Recomputes per-role aggregates from the rows.
inline void summarize(EvalReport& report) {
    report.summary.assign(report.k + 1, {});
    for (std::size_t role = 0; role <= report.k; ++role) {
        std::vector<double> m, p, s;
        for (const auto& r : report.rows) {
            if (r.role != role) continue;
            m.push_back(r.metrics.mse);
            p.push_back(r.metrics.psnr);
            s.push_back(r.metrics.ssim);
        }
        report.summary[role] = {detail::summarize(m), detail::summarize(p), detail::summarize(s)};
    }
}

/// Noiseless encode/decode of `sample_count` tuples drawn without replacement (seeded).
/// Metrics compare the raw network outputs with the inputs, before any 8-bit quantisation.
inline EvalReport evaluate_dataset(const ModelParams<float>& model, const TensorSplit& split,
                                   std::size_t sample_count, std::uint64_t seed,
                                   std::string checkpoint_id = {}, std::size_t chunk = 16) {
    if (split.pool_size() == 0) throw DatasetError("evaluate_dataset: empty split");
    if (split.k() != model.spec.k)
        throw ShapeError("evaluate_dataset: split has " + std::to_string(split.k()) +
                         " secret pools, model expects " + std::to_string(model.spec.k));
    EvalReport report;
    report.k = model.spec.k;
    report.checkpoint = std::move(checkpoint_id);
    report.seed = seed;

    std::vector<std::size_t> idx(split.pool_size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(sample_count, idx.size()));

    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t end = std::min(idx.size(), start + chunk);
        StegoBatch<float> batch;
        auto gather = [&](const TensorSplit::Pool& pool) {
            std::vector<ImageTensor> parts;
            for (std::size_t i = start; i < end; ++i) parts.push_back(*pool[idx[i]]);
            return stack_batch<float>(parts);
        };
        batch.cover = gather(split.cover);
        for (const auto& pool : split.secrets) batch.secrets.push_back(gather(pool));
        const auto container = encode_forward(model, batch);
        const auto decoded = decode_all(model, container);
        for (std::size_t j = 0; j < end - start; ++j) {
            report.rows.push_back({idx[start + j], 0,
                                   pair_metrics(take_image(batch.cover, j), take_image(container, j))});
            for (std::size_t i = 0; i < report.k; ++i)
                report.rows.push_back({idx[start + j], i + 1,
                                       pair_metrics(take_image(batch.secrets[i], j), take_image(decoded[i], j))});
        }
    }
    summarize(report);
    return report;
}

namespace detail {

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline nlohmann::json metric_json(double v) {
    if (std::isfinite(v)) return v;
    return format_metric(v);
}

} // namespace detail

/// `sample,role,mse,psnr,ssim`; infinite PSNR is written as `inf`.
inline void write_eval_csv(const EvalReport& r, std::ostream& out) {
    out << "sample,role,mse,psnr,ssim\n";
    for (const auto& row : r.rows)
        out << row.sample << ',' << EvalReport::role_name(row.role) << ',' << detail::format_metric(row.metrics.mse)
            << ',' << detail::format_metric(row.metrics.psnr) << ',' << detail::format_metric(row.metrics.ssim)
            << '\n';
}

inline nlohmann::json eval_summary_json(const EvalReport& r) {
    nlohmann::json roles = nlohmann::json::object();
    for (std::size_t role = 0; role < r.summary.size(); ++role) {
        const auto& s = r.summary[role];
        auto pack = [](const MetricSummary& m) {
            return nlohmann::json{{"mean", detail::metric_json(m.mean)}, {"median", detail::metric_json(m.median)}};
        };
        roles[EvalReport::role_name(role)] = {{"mse", pack(s.mse)}, {"psnr", pack(s.psnr)}, {"ssim", pack(s.ssim)}};
    }
    std::size_t samples = 0;
    for (const auto& row : r.rows) samples += row.role == 0;
    return {{"k", r.k}, {"checkpoint", r.checkpoint}, {"seed", r.seed}, {"samples", samples}, {"roles", roles}};
}

inline void write_eval_files(const EvalReport& r, const std::filesystem::path& csv_path,
                             const std::filesystem::path& json_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write '" + csv_path.string() + "'");
    write_eval_csv(r, csv);
    std::ofstream js(json_path);
    if (!js) throw IoError("cannot write '" + json_path.string() + "'");
    js << eval_summary_json(r).dump(2) << '\n';
}

} // namespace deepsteg
