#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <map>
#include <set>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/synthdata/dataset.hpp"

using namespace davalab;
using namespace davalab::synthdata;

namespace {

double pixel_mass(const ObservationBatch<float>& b, int i) {
    double m = 0.0;
    const float* img = b.image(i);
    for (std::size_t p = 0; p < b.image_size(); ++p) m += img[p];
    return m;
}

double centroid_x(const ObservationBatch<float>& b, int i) {
    double m = 0.0, mx = 0.0;
    const float* img = b.image(i);
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            const double v = img[y * b.width + x];
            m += v;
            mx += v * x;
        }
    return mx / m;
}

}  // namespace

TEST_CASE("default toysprites enumerates 1152 distinct images") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{});
    CHECK(ds.size() == 2 * 3 * 8 * 8 * 3);
    const auto all = ds.enumerate();
    CHECK(all.n == 1152);
    std::set<std::vector<float>> seen;
    for (int i = 0; i < all.n; ++i)
        seen.insert(std::vector<float>(all.image(i), all.image(i) + all.image_size()));
    CHECK(seen.size() == 1152);
    // values normalized to [0, 1]
    for (float v : all.images) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("rendering is deterministic") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = 32});
    const int f[5] = {1, 2, 3, 4, 1};
    std::vector<float> a(ds.pixels()), b(ds.pixels());
    ds.render(f, a.data());
    ds.render(f, b.data());
    CHECK(a == b);
}

TEST_CASE("pixel mass is invariant under position changes") {
    for (int side : {32, 64}) {
        auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = side});
        for (int shape = 0; shape < 2; ++shape)
            for (int scale = 0; scale < 3; ++scale) {
                std::vector<long> ids;
                std::vector<int> f = {shape, scale, 0, 0, 2};
                for (int x = 0; x < 8; ++x)
                    for (int y = 0; y < 8; ++y) {
                        f[2] = x;
                        f[3] = y;
                        ids.push_back(ds.factors_to_index(f.data()));
                    }
                const auto batch = ds.batch_for_indices(ids);
                const double m0 = pixel_mass(batch, 0);
                CHECK(m0 > 0.0);
                for (int i = 1; i < batch.n; ++i) CHECK(pixel_mass(batch, i) == m0);
            }
    }
}

TEST_CASE("advancing the x index shifts the centroid by exactly the stride") {
    SpriteConfig cfg{.image_size = 64};
    auto ds = FactorDataset<float>::toysprites(cfg);
    const int stride = cfg.position_stride(cfg.x_positions);
    CHECK(stride >= 1);
    std::vector<int> f = {1, 1, 0, 3, 2};
    std::vector<long> ids;
    for (int x = 0; x < 8; ++x) {
        f[2] = x;
        ids.push_back(ds.factors_to_index(f.data()));
    }
    const auto batch = ds.batch_for_indices(ids);
    for (int i = 1; i < batch.n; ++i) {
        const double shift = centroid_x(batch, i) - centroid_x(batch, i - 1);
        CHECK(shift == doctest::Approx(stride).epsilon(1e-12));
    }
}

TEST_CASE("factor index round trip") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = 32});
    std::vector<int> f(5);
    for (long i = 0; i < ds.size(); ++i) {
        ds.index_to_factors(i, f.data());
        CHECK(ds.factors_to_index(f.data()) == i);
    }
    const int bad[5] = {0, 0, 8, 0, 0};
    CHECK_THROWS_AS(ds.factors_to_index(bad), std::invalid_argument);
}

TEST_CASE("uniform sampling covers combinations uniformly") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = 32});
    Rng rng(17);
    std::map<int, int> shape_counts;
    const auto b = ds.sample_batch(20000, rng);
    for (int i = 0; i < b.n; ++i) ++shape_counts[b.factor_row(i)[0]];
    CHECK(shape_counts.size() == 2);
    for (auto& [k, c] : shape_counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("fixed-factor sampling holds exactly one factor constant") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = 32});
    Rng rng(18);
    for (int k = 0; k < ds.num_factors(); ++k) {
        const auto b = ds.sample_fixed_factor(256, k, rng);
        std::set<int> fixed_vals;
        std::set<int> other_vals;
        const int other = (k + 2) % ds.num_factors();
        for (int i = 0; i < b.n; ++i) {
            fixed_vals.insert(b.factor_row(i)[k]);
            other_vals.insert(b.factor_row(i)[other]);
        }
        CHECK(fixed_vals.size() == 1);
        CHECK(other_vals.size() > 1);
    }
    CHECK_THROWS_AS(ds.sample_fixed_factor(4, 7, rng), std::invalid_argument);
}

TEST_CASE("oversized sprites are rejected") {
    SpriteConfig bad{.image_size = 16, .x_positions = 32};
    CHECK_THROWS_AS(FactorDataset<float>::toysprites(bad), std::invalid_argument);
}

TEST_CASE("cache round trip is bit identical") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{.image_size = 32});
    const std::string path = "toysprites_cache_test.bin";
    ds.save(path);
    auto loaded = FactorDataset<float>::load(path);
    CHECK(loaded.size() == ds.size());
    CHECK(loaded.height() == ds.height());
    CHECK(loaded.num_factors() == 5);
    CHECK(loaded.factors()[2].name == "x");
    const auto a = ds.enumerate();
    const auto b = loaded.enumerate();
    CHECK(a.images == b.images);
    CHECK(a.factors == b.factors);
    std::remove(path.c_str());
    std::remove((path + ".manifest").c_str());
}

TEST_CASE("factor value grids are strictly increasing in [0,1]") {
    auto ds = FactorDataset<float>::toysprites(SpriteConfig{});
    for (const auto& f : ds.factors()) {
        CHECK(f.values.front() >= 0.0);
        CHECK(f.values.back() <= 1.0);
        for (std::size_t i = 1; i < f.values.size(); ++i) CHECK(f.values[i] > f.values[i - 1]);
    }
}
