#pragma once

#include <cmath>
#include <stdexcept>

#include "davalab/metrics/representation.hpp"

namespace davalab::metrics {

// Importance matrix R [d x K]: mutual information between each latent
// dimension and each factor, normalized by the factor's entropy so entries
// live in [0, 1]. Degenerate factors (zero entropy) contribute a zero
// column.
inline Mat<double> dci_importance(const RepresentationSample& s, int bins = 20) {
    s.validate();
    const Mat<int> codes = discretize_equal_width(s.latents, bins);
    const Eigen::Index n = s.latents.rows();
    const Eigen::Index zstride = codes.cols(), fstride = s.factors.cols();
    Mat<double> R(s.dims(), s.num_factors());
    for (int k = 0; k < s.num_factors(); ++k) {
        const int* f = detail::col_ptr(s.factors, k);
        const double h = detail::entropy(f, n, fstride);
        for (int j = 0; j < s.dims(); ++j) {
            if (h <= 0.0) {
                R(j, k) = 0.0;
                continue;
            }
            const double mi = detail::mutual_information(detail::col_ptr(codes, j), f, n, zstride, fstride);
            R(j, k) = std::min(1.0, mi / h);
        }
    }
    return R;
}

// Disentanglement score from an importance matrix: each latent dimension
// scores 1 minus the base-K entropy of its normalized importance row, and
// the scores are averaged with weights proportional to row mass. Rows with
// mass below 1e-6 are dropped (dead dimensions carry no weight anyway).
inline double dci_from_importance(const Mat<double>& R) {
    require(R.rows() >= 1 && R.cols() >= 2, "dci: need at least one latent dim and two factors");
    require(R.allFinite() && (R.array() >= 0.0).all(), "dci: importance entries must be finite and non-negative");
    constexpr double kRowThreshold = 1e-6;
    const double log_k = std::log(static_cast<double>(R.cols()));
    double mass = 0.0, score = 0.0;
    for (Eigen::Index j = 0; j < R.rows(); ++j) {
        const double row_sum = R.row(j).sum();
        if (row_sum < kRowThreshold) continue;
        double h = 0.0;
        for (Eigen::Index k = 0; k < R.cols(); ++k) {
            const double q = R(j, k) / row_sum;
            if (q > 0.0) h -= q * std::log(q);
        }
        score += row_sum * (1.0 - h / log_k);
        mass += row_sum;
    }
    require(mass > 0.0, "dci: importance matrix is all zero");
    return score / mass;
}

// DCI disentanglement of a labeled representation.
inline double dci_disentanglement(const RepresentationSample& s, int bins = 20) {
    return dci_from_importance(dci_importance(s, bins));
}

}  // namespace davalab::metrics
