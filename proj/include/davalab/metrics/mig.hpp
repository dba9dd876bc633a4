#pragma once

#include <cstdio>
#include <stdexcept>
#include <vector>

#include "davalab/metrics/representation.hpp"

namespace davalab::metrics {

// Mutual information gap: for each factor, the margin between the most and
// second-most informative latent dimension, normalized by the factor's
// entropy, averaged over factors. Factors with a single observed value
// carry no information and are skipped with a warning.
inline double mig(const RepresentationSample& s, int bins = 20) {
    s.validate();
    require(s.dims() >= 2, "mig: need at least two latent dimensions");
    const Mat<int> codes = discretize_equal_width(s.latents, bins);
    const Eigen::Index n = s.latents.rows();
    const Eigen::Index zstride = codes.cols(), fstride = s.factors.cols();

    double total = 0.0;
    int used = 0;
    for (int k = 0; k < s.num_factors(); ++k) {
        const int* f = detail::col_ptr(s.factors, k);
        const double h = detail::entropy(f, n, fstride);
        if (h <= 0.0) {
            std::fprintf(stderr, "mig: factor %d has a single observed value; skipping\n", k);
            continue;
        }
        double top1 = 0.0, top2 = 0.0;
        for (int j = 0; j < s.dims(); ++j) {
            const double mi = detail::mutual_information(detail::col_ptr(codes, j), f, n, zstride, fstride);
            if (mi > top1) {
                top2 = top1;
                top1 = mi;
            } else if (mi > top2) {
                top2 = mi;
            }
        }
        total += (top1 - top2) / h;
        ++used;
    }
    require(used > 0, "mig: every factor has a single observed value");
    return total / static_cast<double>(used);
}

}  // namespace davalab::metrics
