#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "davalab/core/rng.hpp"

using davalab::Rng;

TEST_CASE("same seed reproduces the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42), d(43);
    bool differs = false;
    for (int i = 0; i < 16; ++i) differs |= (c.next_u64() != d.next_u64());
    CHECK(differs);
}

TEST_CASE("uniform moments") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
        sq += u * u;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 0.5) < 0.005);
    CHECK(std::abs(var - 1.0 / 12.0) < 0.005);
}

TEST_CASE("normal moments") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sq = 0.0, quad = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
        quad += z * z * z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
    CHECK(std::abs(quad / n - 3.0) < 0.1);  // kurtosis of a true normal
}

TEST_CASE("uniform_int stays in range and covers it") {
    Rng rng(3);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 100000; ++i) ++counts[rng.uniform_int(10)];
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("shuffle produces a permutation") {
    Rng rng(5);
    auto p = rng.permutation(257);
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("split streams are decorrelated") {
    Rng base(99);
    Rng a = base.split(0), b = base.split(1);
    int agree = 0;
    for (int i = 0; i < 4096; ++i) agree += (a.next_u64() & 1) == (b.next_u64() & 1);
    CHECK(agree > 1800);
    CHECK(agree < 2300);
    // splitting is a pure function of (seed, id)
    CHECK(Rng(99).split(0).next_u64() == Rng(99).split(0).next_u64());
    CHECK(Rng(99).split(0).next_u64() != Rng(99).split(2).next_u64());
}
