#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "deepsteg/dataset.hpp"
#include "support/synthetic.hpp"

using namespace deepsteg;
using deepsteg::support::TempDir;

namespace {

// Empty files are enough for record sampling; only their names are inspected.
void touch_classes(const std::filesystem::path& root, std::size_t classes, std::size_t per_class) {
    for (std::size_t c = 0; c < classes; ++c) {
        const auto dir = root / ("n" + std::to_string(1000 + c));
        std::filesystem::create_directories(dir);
        for (std::size_t i = 0; i < per_class; ++i) std::ofstream(dir / ("im" + std::to_string(i) + ".png"));
    }
}

std::vector<ImageRecord> fake_records(std::size_t n) {
    std::vector<ImageRecord> r;
    for (std::size_t i = 0; i < n; ++i) r.push_back({"/x/" + std::to_string(i), std::to_string(i), "c"});
    return r;
}

TensorSplit tagged_split(std::size_t pool, std::size_t k) {
    // Pixel value encodes (pool index, position) so batches can be traced back.
    TensorSplit s;
    auto make = [&](std::size_t p) {
        TensorSplit::Pool out;
        for (std::size_t i = 0; i < pool; ++i)
            out.push_back(std::make_shared<const ImageTensor>(Shape{1, 2, 2, 3}, static_cast<float>(p * 10000 + i)));
        return out;
    };
    s.cover = make(0);
    for (std::size_t i = 1; i <= k; ++i) s.secrets.push_back(make(i));
    return s;
}

} // namespace

TEST(BuildDataset, BalancedAcrossClasses) {
    TempDir dir;
    touch_classes(dir.path(), 200, 12);
    const auto recs = build_dataset(dir.path(), 2000, 1);
    ASSERT_EQ(recs.size(), 2000u);
    std::map<std::string, std::size_t> per_class;
    for (const auto& r : recs) ++per_class[r.class_name];
    ASSERT_EQ(per_class.size(), 200u);
    for (const auto& [c, n] : per_class) EXPECT_EQ(n, 10u) << c;
    std::set<std::string> unique;
    for (const auto& r : recs) unique.insert(r.path.string());
    EXPECT_EQ(unique.size(), 2000u);
}

TEST(BuildDataset, DeterministicUnderSeed) {
    TempDir dir;
    touch_classes(dir.path(), 7, 9);
    const auto a = build_dataset(dir.path(), 40, 5);
    const auto b = build_dataset(dir.path(), 40, 5);
    const auto c = build_dataset(dir.path(), 40, 6);
    ASSERT_EQ(a.size(), 40u);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(BuildDataset, UnevenClassesStillFillRequest) {
    TempDir dir;
    touch_classes(dir.path(), 3, 2);
    std::filesystem::create_directories(dir / "big");
    for (int i = 0; i < 20; ++i) std::ofstream(dir / "big" / ("b" + std::to_string(i) + ".jpg"));
    EXPECT_EQ(build_dataset(dir.path(), 20, 0).size(), 20u);
}

TEST(BuildDataset, ZeroAndShortfall) {
    TempDir dir;
    touch_classes(dir.path(), 2, 3);
    EXPECT_TRUE(build_dataset(dir.path(), 0, 0).empty());
    try {
        build_dataset(dir.path(), 10, 0);
        FAIL() << "expected DatasetError";
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("6"), std::string::npos) << e.what();
    }
}

TEST(SplitDataset, PoolSizes) {
    auto s3 = split_dataset(fake_records(2000), 3);
    EXPECT_EQ(s3.cover_pool.size(), 500u);
    ASSERT_EQ(s3.k(), 3u);
    for (const auto& p : s3.secret_pools) EXPECT_EQ(p.size(), 500u);

    auto s1 = split_dataset(fake_records(2000), 1);
    EXPECT_EQ(s1.cover_pool.size(), 1000u);
    EXPECT_EQ(s1.secret_pools.at(0).size(), 1000u);

    auto s2 = split_dataset(fake_records(10), 2);
    EXPECT_EQ(s2.cover_pool.size(), 3u);
    EXPECT_EQ(s2.secret_pools.at(1).size(), 3u);
    EXPECT_EQ(s2.secret_pools.at(1).back().relative, "8"); // record 9 dropped

    EXPECT_THROW(split_dataset(fake_records(2), 2), DatasetError);
}

TEST(SplitDataset, DisjointPoolsInListOrder) {
    const auto recs = fake_records(13);
    const auto s = split_dataset(recs, 3);
    std::set<std::string> seen;
    std::size_t i = 0;
    for (const auto& r : s.cover_pool) {
        EXPECT_EQ(r, recs[i++]);
        EXPECT_TRUE(seen.insert(r.path.string()).second);
    }
    for (const auto& p : s.secret_pools)
        for (const auto& r : p) {
            EXPECT_EQ(r, recs[i++]);
            EXPECT_TRUE(seen.insert(r.path.string()).second);
        }
}

TEST(SplitDataset, SharedSecretModeReusesOneHalf) {
    const auto s = split_dataset(fake_records(2000), 3, SplitMode::shared_secret);
    EXPECT_EQ(s.cover_pool.size(), 1000u);
    EXPECT_EQ(s.cover_pool.front().relative, "1000");
    std::set<std::string> base;
    for (const auto& r : s.secret_pools[0]) base.insert(r.path.string());
    EXPECT_EQ(base.size(), 1000u);
    for (const auto& p : s.secret_pools) {
        std::set<std::string> here;
        for (const auto& r : p) here.insert(r.path.string());
        EXPECT_EQ(here, base);
    }
    EXPECT_NE(s.secret_pools[0].front(), s.secret_pools[1].front());
}

TEST(SplitManifest, RoundTrips) {
    TempDir dir;
    auto recs = fake_records(9);
    for (auto& r : recs) {
        r.relative = "cls/" + r.relative.string() + ".png";
        r.path = dir.path() / r.relative;
    }
    const auto s = split_dataset(recs, 2);
    write_split_manifest(s, dir / "split.tsv");
    std::ifstream in(dir / "split.tsv");
    std::string first;
    std::getline(in, first);
    EXPECT_EQ(first, "0\tcls/0.png");
    const auto back = read_split_manifest(dir / "split.tsv", dir.path());
    ASSERT_EQ(back.k(), 2u);
    EXPECT_EQ(back.cover_pool.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.cover_pool[i].path, s.cover_pool[i].path);
        EXPECT_EQ(back.secret_pools[1][i].relative, s.secret_pools[1][i].relative);
    }
}

TEST(BatchIterator, FinalShortBatchIsKept) {
    const auto split = tagged_split(500, 3);
    BatchIterator it(split, 256, 0, true);
    std::vector<std::size_t> sizes;
    while (auto b = it.next()) {
        sizes.push_back(b->size());
        EXPECT_NO_THROW(b->validate());
        EXPECT_EQ(b->k(), 3u);
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{256, 244}));
    EXPECT_EQ(it.batches_per_epoch(), 2u);
}

TEST(BatchIterator, EpochCoversEveryPoolExactlyOnce) {
    const std::size_t n = 37, k = 2;
    const auto split = tagged_split(n, k);
    BatchIterator it(split, 8, 3, true);
    for (std::size_t epoch = 0; epoch < 3; ++epoch) {
        it.start_epoch(epoch);
        std::vector<std::multiset<float>> seen(k + 1);
        while (auto b = it.next()) {
            for (std::size_t j = 0; j < b->size(); ++j) {
                seen[0].insert(b->cover(j, 0, 0, 0));
                for (std::size_t i = 0; i < k; ++i) seen[i + 1].insert(b->secrets[i](j, 1, 1, 2));
            }
        }
        for (std::size_t p = 0; p <= k; ++p) {
            std::multiset<float> want;
            for (std::size_t i = 0; i < n; ++i) want.insert(static_cast<float>(p * 10000 + i));
            EXPECT_EQ(seen[p], want);
        }
    }
}

TEST(BatchIterator, ShuffleOffKeepsPoolOrder) {
    const auto split = tagged_split(10, 1);
    BatchIterator it(split, 4, 99, false);
    for (std::size_t epoch = 0; epoch < 2; ++epoch) {
        it.start_epoch(epoch);
        std::vector<float> order;
        while (auto b = it.next())
            for (std::size_t j = 0; j < b->size(); ++j) order.push_back(b->secrets[0](j, 0, 0, 0));
        for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(order[i], 10000.0f + static_cast<float>(i));
    }
}

TEST(BatchIterator, SameSeedSameSequenceAndPoolsShuffleIndependently) {
    const auto split = tagged_split(50, 2);
    BatchIterator a(split, 7, 42, true), b(split, 7, 42, true);
    a.start_epoch(4);
    b.start_epoch(4);
    EXPECT_EQ(a.orders(), b.orders());
    while (auto x = a.next()) {
        auto y = b.next();
        ASSERT_TRUE(y);
        EXPECT_EQ(x->cover, y->cover);
        EXPECT_EQ(x->secrets, y->secrets);
    }
    EXPECT_NE(a.orders()[0], a.orders()[1]);
    BatchIterator c(split, 7, 42, true);
    c.start_epoch(5);
    EXPECT_NE(a.orders(), c.orders());
}

TEST(BatchIterator, EmptySplitYieldsNothing) {
    const auto split = tagged_split(0, 1);
    BatchIterator it(split, 4, 0, true);
    EXPECT_FALSE(it.next());
    EXPECT_THROW(BatchIterator(split, 0, 0, true), DatasetError);
}

TEST(LoadSplit, SharesImagesAcrossPools) {
    TempDir dir;
    support::write_image_folder(dir.path(), 2, 4, 1);
    const auto recs = build_dataset(dir.path(), 8, 0);
    const auto s = split_dataset(recs, 2, SplitMode::shared_secret);
    const auto t = load_split(s);
    EXPECT_EQ(t.pool_size(), 4u);
    EXPECT_EQ(t.k(), 2u);
    std::set<const ImageTensor*> distinct;
    for (const auto& pool : t.secrets)
        for (const auto& img : pool) distinct.insert(img.get());
    EXPECT_EQ(distinct.size(), 4u);
}
