#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/vae/model.hpp"

// Shared plumbing for the supervised metrics: labeled latent
// representations, equal-width discretization, and histogram estimates of
// entropy and mutual information (natural log throughout).
namespace davalab::metrics {

// Posterior means paired with ground-truth factor indices, one row per
// sample.
struct RepresentationSample {
    Mat<double> latents;  // [n x d]
    Mat<int> factors;     // [n x K]

    int n() const { return static_cast<int>(latents.rows()); }
    int dims() const { return static_cast<int>(latents.cols()); }
    int num_factors() const { return static_cast<int>(factors.cols()); }

    void validate() const {
        require(latents.rows() >= 2, "RepresentationSample: need at least two samples");
        require(latents.rows() == factors.rows(), "RepresentationSample: latent/factor row mismatch");
        require(latents.cols() >= 1 && factors.cols() >= 1, "RepresentationSample: empty dimensions");
        require(latents.allFinite(), "RepresentationSample: non-finite latents");
        require((factors.array() >= 0).all(), "RepresentationSample: negative factor index");
    }
};

// Encodes n freshly sampled observations and keeps the posterior means
// (not samples), so metric variance carries no sampling noise.
template <typename T>
RepresentationSample encode_representation(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data,
                                           int n, Rng& rng) {
    require(n >= 2, "encode_representation: need at least two samples");
    constexpr int kChunk = 256;
    RepresentationSample s;
    s.latents.resize(n, model.z_dim());
    s.factors.resize(n, data.num_factors());
    Mat<T> mean, logvar;
    for (int done = 0; done < n; done += kChunk) {
        const int m = std::min(kChunk, n - done);
        const ObservationBatch<T> batch = data.sample_batch(m, rng);
        model.encode(batch, mean, logvar);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < model.z_dim(); ++j)
                s.latents(done + i, j) = static_cast<double>(mean(j, i));
            const int* f = batch.factor_row(i);
            for (int k = 0; k < data.num_factors(); ++k) s.factors(done + i, k) = f[k];
        }
    }
    s.validate();
    return s;
}

// Equal-width binning of every latent dimension over its observed range.
// A degenerate dimension (constant) lands entirely in bin 0.
inline Mat<int> discretize_equal_width(const Mat<double>& latents, int bins) {
    require(bins >= 2, "discretize_equal_width: need at least two bins");
    Mat<int> codes(latents.rows(), latents.cols());
    for (Eigen::Index j = 0; j < latents.cols(); ++j) {
        const double lo = latents.col(j).minCoeff();
        const double hi = latents.col(j).maxCoeff();
        if (hi <= lo) {
            codes.col(j).setZero();
            continue;
        }
        const double scale = static_cast<double>(bins) / (hi - lo);
        for (Eigen::Index i = 0; i < latents.rows(); ++i) {
            const int b = static_cast<int>(std::floor((latents(i, j) - lo) * scale));
            codes(i, j) = std::clamp(b, 0, bins - 1);
        }
    }
    return codes;
}

namespace detail {

inline int code_cardinality(const int* v, Eigen::Index n, Eigen::Index stride) {
    int hi = 0;
    for (Eigen::Index i = 0; i < n; ++i) hi = std::max(hi, v[i * stride]);
    return hi + 1;
}

// Shannon entropy (nats) of one discrete code column.
inline double entropy(const int* v, Eigen::Index n, Eigen::Index stride) {
    const int card = code_cardinality(v, n, stride);
    std::vector<double> p(static_cast<std::size_t>(card), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) p[static_cast<std::size_t>(v[i * stride])] += 1.0;
    double h = 0.0;
    for (double c : p)
        if (c > 0.0) {
            const double q = c / static_cast<double>(n);
            h -= q * std::log(q);
        }
    return h;
}

// Histogram mutual information (nats) of two paired discrete codes.
inline double mutual_information(const int* a, const int* b, Eigen::Index n, Eigen::Index stride_a,
                                 Eigen::Index stride_b) {
    const int ca = code_cardinality(a, n, stride_a);
    const int cb = code_cardinality(b, n, stride_b);
    std::vector<double> joint(static_cast<std::size_t>(ca) * cb, 0.0);
    std::vector<double> pa(static_cast<std::size_t>(ca), 0.0), pb(static_cast<std::size_t>(cb), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int x = a[i * stride_a], y = b[i * stride_b];
        joint[static_cast<std::size_t>(x) * cb + y] += 1.0;
        pa[static_cast<std::size_t>(x)] += 1.0;
        pb[static_cast<std::size_t>(y)] += 1.0;
    }
    const double dn = static_cast<double>(n);
    double mi = 0.0;
    for (int x = 0; x < ca; ++x)
        for (int y = 0; y < cb; ++y) {
            const double j = joint[static_cast<std::size_t>(x) * cb + y];
            if (j > 0.0) mi += (j / dn) * std::log(j * dn / (pa[static_cast<std::size_t>(x)] * pb[static_cast<std::size_t>(y)]));
        }
    return std::max(0.0, mi);
}

// Column accessors for the row-major sample matrices.
inline const int* col_ptr(const Mat<int>& m, Eigen::Index j) { return m.data() + j; }

}  // namespace detail

}  // namespace davalab::metrics
