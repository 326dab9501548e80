#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepsteg/error.hpp"
#include "deepsteg/image_io.hpp"
#include "deepsteg/tensor.hpp"

namespace deepsteg {

/// One cover batch plus k secret batches; secret i is always decoded by reveal network i.
template <typename T>
struct StegoBatch {
    Tensor<T> cover;
    std::vector<Tensor<T>> secrets;

    std::size_t k() const noexcept { return secrets.size(); }
    std::size_t size() const noexcept { return cover.shape().batch; }

    void validate() const {
        if (cover.empty()) throw ShapeError("StegoBatch: empty cover");
        for (const auto& s : secrets) require_same_shape(cover.shape(), s.shape(), "StegoBatch");
    }
};

template <typename To, typename From>
StegoBatch<To> batch_cast(const StegoBatch<From>& b) {
    StegoBatch<To> out{tensor_cast<To>(b.cover), {}};
    for (const auto& s : b.secrets) out.secrets.push_back(tensor_cast<To>(s));
    return out;
}

struct ImageRecord {
    std::filesystem::path path;     // as found on disk
    std::filesystem::path relative; // relative to the dataset root
    std::string class_name;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

enum class SplitMode {
    /// k + 1 pairwise-disjoint pools of equal length.
    disjoint,
    /// One cover half and one secret half; every decoder draws from the secret half.
    shared_secret,
};

inline std::string to_string(SplitMode m) {
    return m == SplitMode::disjoint ? "disjoint" : "shared_secret";
}

inline SplitMode parse_split_mode(const std::string& s) {
    if (s == "disjoint") return SplitMode::disjoint;
    if (s == "shared_secret" || s == "shared") return SplitMode::shared_secret;
    throw ConfigError("unknown split mode '" + s + "' (expected disjoint or shared_secret)");
}

struct DatasetSplit {
    std::vector<ImageRecord> cover_pool;
    std::vector<std::vector<ImageRecord>> secret_pools;
    SplitMode mode = SplitMode::disjoint;

    std::size_t k() const noexcept { return secret_pools.size(); }
    std::size_t pool_size() const noexcept { return cover_pool.size(); }
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

} // namespace detail

/// Samples `n_images` records from `<root>/<class>/*.{png,jpg}`, balanced across classes.
///
/// Each class receives floor(n / classes) images, the remainder going to randomly chosen
/// classes; classes that run short are topped up from classes with spare images. The
/// returned list is shuffled so that consecutive slices mix classes.
inline std::vector<ImageRecord> build_dataset(const std::filesystem::path& root,
                                              std::size_t n_images, std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root))
        throw DatasetError("dataset root '" + root.string() + "' is not a directory");

    std::vector<std::vector<ImageRecord>> classes;
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());

    std::size_t available = 0;
    for (const auto& dir : class_dirs) {
        std::vector<ImageRecord> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file() || !detail::is_image_file(entry.path())) continue;
            files.push_back({entry.path(), fs::relative(entry.path(), root),
                             dir.filename().string()});
        }
        std::sort(files.begin(), files.end(),
                  [](const auto& a, const auto& b) { return a.path < b.path; });
        available += files.size();
        if (!files.empty()) classes.push_back(std::move(files));
    }

    if (n_images == 0) return {};
    if (available < n_images)
        throw DatasetError("dataset root '" + root.string() + "' has " +
                           std::to_string(available) + " images, " + std::to_string(n_images) +
                           " requested (short by " + std::to_string(n_images - available) + ")");

    std::mt19937_64 rng(seed);
    for (auto& files : classes) std::shuffle(files.begin(), files.end(), rng);

    std::vector<std::size_t> order(classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_classes = classes.size();
    std::vector<std::size_t> quota(n_classes, n_images / n_classes);
    for (std::size_t i = 0; i < n_images % n_classes; ++i) ++quota[order[i]];

    // Move any quota a class cannot satisfy onto classes that still have spare images.
    std::size_t deficit = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (quota[c] > classes[c].size()) {
            deficit += quota[c] - classes[c].size();
            quota[c] = classes[c].size();
        }
    }
    while (deficit > 0) {
        for (std::size_t i = 0; i < n_classes && deficit > 0; ++i) {
            const std::size_t c = order[i];
            if (quota[c] < classes[c].size()) {
                ++quota[c];
                --deficit;
            }
        }
    }

    std::vector<ImageRecord> out;
    out.reserve(n_images);
    for (std::size_t c = 0; c < n_classes; ++c)
        out.insert(out.end(), classes[c].begin(), classes[c].begin() + quota[c]);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// Partitions records, in list order, into a cover pool and k secret pools of equal length.
///
/// In `disjoint` mode the list is cut into k + 1 pools and the remainder is dropped. In
/// `shared_secret` mode the first half holds secrets and the second half covers; secret
/// pool i is the secret half rotated by i * size / k so unshuffled batches differ per decoder.
inline DatasetSplit split_dataset(const std::vector<ImageRecord>& records, std::size_t k,
                                  SplitMode mode = SplitMode::disjoint) {
    if (k == 0) throw DatasetError("split_dataset: k must be at least 1");
    DatasetSplit split;
    split.mode = mode;
    if (mode == SplitMode::disjoint) {
        const std::size_t pool = records.size() / (k + 1);
        if (pool == 0)
            throw DatasetError("split_dataset: " + std::to_string(records.size()) +
                               " records cannot fill " + std::to_string(k + 1) + " pools");
        split.cover_pool.assign(records.begin(), records.begin() + pool);
        for (std::size_t i = 0; i < k; ++i) {
            auto first = records.begin() + (i + 1) * pool;
            split.secret_pools.emplace_back(first, first + pool);
        }
    } else {
        const std::size_t half = records.size() / 2;
        if (half == 0)
            throw DatasetError("split_dataset: " + std::to_string(records.size()) +
                               " records cannot fill a cover and a secret half");
        std::vector<ImageRecord> secrets(records.begin(), records.begin() + half);
        split.cover_pool.assign(records.begin() + half, records.begin() + 2 * half);
        for (std::size_t i = 0; i < k; ++i) {
            auto pool = secrets;
            std::rotate(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>((i * half / k) % half),
                        pool.end());
            split.secret_pools.push_back(std::move(pool));
        }
    }
    return split;
}

/// Writes `pool_index<TAB>relative_path` per line; pool 0 is the cover pool.
inline void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write split manifest '" + path.string() + "'");
    for (const auto& r : split.cover_pool) out << 0 << '\t' << r.relative.generic_string() << '\n';
    for (std::size_t i = 0; i < split.k(); ++i)
        for (const auto& r : split.secret_pools[i])
            out << (i + 1) << '\t' << r.relative.generic_string() << '\n';
    if (!out) throw IoError("failed writing split manifest '" + path.string() + "'");
}

inline DatasetSplit read_split_manifest(const std::filesystem::path& path,
                                        const std::filesystem::path& root,
                                        SplitMode mode = SplitMode::disjoint) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read split manifest '" + path.string() + "'");
    DatasetSplit split;
    split.mode = mode;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
        std::size_t pool = 0;
        try {
            pool = std::stoul(line.substr(0, tab));
        } catch (const std::exception&) {
            throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": bad pool index");
        }
        std::filesystem::path rel = line.substr(tab + 1);
        ImageRecord rec{root / rel, rel, rel.has_parent_path() ? rel.parent_path().string() : ""};
        if (pool == 0) {
            split.cover_pool.push_back(std::move(rec));
        } else {
            if (split.secret_pools.size() < pool) split.secret_pools.resize(pool);
            split.secret_pools[pool - 1].push_back(std::move(rec));
        }
    }
    for (const auto& p : split.secret_pools)
        if (p.size() != split.cover_pool.size())
            throw DatasetError("split manifest '" + path.string() + "' has unequal pools");
    return split;
}

/// Decoded pixels for every pool of a split. Images are immutable and shared.
struct TensorSplit {
    using Pool = std::vector<std::shared_ptr<const ImageTensor>>;
    Pool cover;
    std::vector<Pool> secrets;

    std::size_t k() const noexcept { return secrets.size(); }
    std::size_t pool_size() const noexcept { return cover.size(); }
};

/// Loads every record once; records appearing in several pools share one tensor.
inline TensorSplit load_split(const DatasetSplit& split, Diagnostics* diag = nullptr) {
    std::unordered_map<std::string, std::shared_ptr<const ImageTensor>> cache;
    auto load = [&](const ImageRecord& r) {
        auto key = r.path.string();
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        auto img = std::make_shared<const ImageTensor>(load_image(r.path, diag));
        cache.emplace(std::move(key), img);
        return img;
    };
    TensorSplit out;
    for (const auto& r : split.cover_pool) out.cover.push_back(load(r));
    for (const auto& pool : split.secret_pools) {
        TensorSplit::Pool p;
        for (const auto& r : pool) p.push_back(load(r));
        out.secrets.push_back(std::move(p));
    }
    return out;
}

/// Yields aligned StegoBatches over a TensorSplit, one epoch at a time.
///
/// With shuffling on, every pool is permuted independently at the start of each epoch by a
/// generator seeded from (seed, epoch), so any epoch can be replayed in isolation.
class BatchIterator {
public:
    BatchIterator(const TensorSplit& split, std::size_t batch_size, std::uint64_t seed,
                  bool shuffle)
        : split_(&split), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
        if (batch_size == 0) throw DatasetError("batch_size must be at least 1");
        for (const auto& pool : split.secrets)
            if (pool.size() != split.cover.size())
                throw DatasetError("BatchIterator: pools differ in length");
        start_epoch(0);
    }

    void start_epoch(std::size_t epoch) {
        const std::size_t n = split_->pool_size();
        orders_.assign(split_->k() + 1, std::vector<std::size_t>(n));
        for (auto& o : orders_) std::iota(o.begin(), o.end(), 0);
        if (shuffle_) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                              static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
            std::mt19937_64 rng(seq);
            for (auto& o : orders_) std::shuffle(o.begin(), o.end(), rng);
        }
        cursor_ = 0;
    }

    std::size_t batches_per_epoch() const noexcept {
        return (split_->pool_size() + batch_size_ - 1) / batch_size_;
    }

    std::optional<StegoBatch<float>> next() {
        const std::size_t n = split_->pool_size();
        if (cursor_ >= n) return std::nullopt;
        const std::size_t end = std::min(n, cursor_ + batch_size_);
        StegoBatch<float> batch;
        batch.cover = gather(split_->cover, orders_[0], cursor_, end);
        for (std::size_t i = 0; i < split_->k(); ++i)
            batch.secrets.push_back(gather(split_->secrets[i], orders_[i + 1], cursor_, end));
        cursor_ = end;
        return batch;
    }

    /// Pool indices (cover first, then secrets) of the current epoch's ordering.
    const std::vector<std::vector<std::size_t>>& orders() const noexcept { return orders_; }

private:
    static ImageTensor gather(const TensorSplit::Pool& pool, const std::vector<std::size_t>& order,
                              std::size_t begin, std::size_t end) {
        Shape s = pool[order[begin]]->shape();
        s.batch = end - begin;
        ImageTensor out(s);
        float* dst = out.data();
        for (std::size_t i = begin; i < end; ++i) {
            const ImageTensor& img = *pool[order[i]];
            if (img.shape().image_size() != s.image_size() || img.shape().batch != 1)
                throw ShapeError("BatchIterator: pool image has shape " + to_string(img.shape()));
            dst = std::copy(img.values().begin(), img.values().end(), dst);
        }
        return out;
    }

    const TensorSplit* split_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    bool shuffle_;
    std::vector<std::vector<std::size_t>> orders_;
    std::size_t cursor_ = 0;
};

} // namespace deepsteg
