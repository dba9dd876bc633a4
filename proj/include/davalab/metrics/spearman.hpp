#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "davalab/core/tensor.hpp"

namespace davalab::metrics {

// Fractional ranks (1-based); tied values share the average of the
// positions they occupy.
inline std::vector<double> fractional_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // average of positions i..j, 1-based
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
        i = j + 1;
    }
    return ranks;
}

// Spearman rank correlation: Pearson correlation of fractional ranks.
// Errors when either side has zero rank variance (all values tied).
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    require(xs.size() == ys.size(), "spearman: length mismatch");
    require(xs.size() >= 2, "spearman: need at least two pairs");
    for (double v : xs) require(std::isfinite(v), "spearman: non-finite value");
    for (double v : ys) require(std::isfinite(v), "spearman: non-finite value");
    const std::vector<double> rx = fractional_ranks(xs);
    const std::vector<double> ry = fractional_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double a = rx[i] - mx, b = ry[i] - my;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    require(sxx > 0.0 && syy > 0.0, "spearman: zero rank variance");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace davalab::metrics
