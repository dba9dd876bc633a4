#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/vae/model.hpp"

// Factor-VAE style classifier metric: each vote fixes one factor, encodes a
// batch, and nominates the latent dimension with the least within-batch
// variance; a majority table fit on training votes is scored on held-out
// votes.
namespace davalab::metrics {

struct FvaeConfig {
    int votes = 800;
    int batch_per_vote = 64;
    double train_fraction = 0.8;
    int global_stat_samples = 10000;  // pass used to estimate per-dim stds

    void validate() const {
        require(votes >= 2, "FvaeConfig: need at least two votes");
        require(batch_per_vote >= 2, "FvaeConfig: need at least two samples per vote");
        require(train_fraction > 0.0 && train_fraction < 1.0, "FvaeConfig: train_fraction must be in (0, 1)");
        require(global_stat_samples >= 2, "FvaeConfig: need at least two samples for global stds");
    }
};

struct Vote {
    int dim;     // latent dimension with the least normalized variance
    int factor;  // factor that was held fixed
};

// Fits the dim -> factor majority table on `train` and returns accuracy on
// `test`. Ties in the majority count resolve to the smallest factor index;
// a dimension never seen in training predicts no factor (always wrong).
inline double fvae_accuracy(const std::vector<Vote>& train, const std::vector<Vote>& test, int num_dims,
                            int num_factors) {
    require(!train.empty() && !test.empty(), "fvae_accuracy: empty vote split");
    require(num_dims >= 1 && num_factors >= 1, "fvae_accuracy: empty table");
    Mat<int> counts = Mat<int>::Zero(num_dims, num_factors);
    for (const Vote& v : train) {
        require(v.dim >= 0 && v.dim < num_dims && v.factor >= 0 && v.factor < num_factors,
                "fvae_accuracy: vote out of range");
        counts(v.dim, v.factor) += 1;
    }
    std::vector<int> table(static_cast<std::size_t>(num_dims), -1);
    for (int j = 0; j < num_dims; ++j) {
        int best = -1, best_count = 0;
        for (int k = 0; k < num_factors; ++k)
            if (counts(j, k) > best_count) {
                best = k;
                best_count = counts(j, k);
            }
        table[static_cast<std::size_t>(j)] = best;
    }
    int correct = 0;
    for (const Vote& v : test)
        if (table[static_cast<std::size_t>(v.dim)] == v.factor) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace detail {

// Per-dimension std of posterior means over a broad sample of the dataset.
template <typename T>
Vec<double> global_latent_stds(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int samples,
                               Rng& rng) {
    constexpr int kChunk = 256;
    const int d = model.z_dim();
    Vec<double> sum = Vec<double>::Zero(d), sum_sq = Vec<double>::Zero(d);
    Mat<T> mean, logvar;
    for (int done = 0; done < samples; done += kChunk) {
        const int m = std::min(kChunk, samples - done);
        const ObservationBatch<T> batch = data.sample_batch(m, rng);
        model.encode(batch, mean, logvar);
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < m; ++i) {
                const double v = static_cast<double>(mean(j, i));
                sum[j] += v;
                sum_sq[j] += v * v;
            }
    }
    Vec<double> stds(d);
    const double dn = static_cast<double>(samples);
    for (int j = 0; j < d; ++j) {
        const double var = std::max(0.0, sum_sq[j] / dn - (sum[j] / dn) * (sum[j] / dn));
        stds[j] = std::sqrt(var);
    }
    return stds;
}

}  // namespace detail

// Full metric. Latent dims are normalized by their global empirical stds;
// dims with global variance below 1e-6 are treated as collapsed and
// excluded from the argmin. Votes are split train/test in generation order
// (they are exchangeable), with ceil-free floor on the training count.
template <typename T>
double fvae_metric(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, const FvaeConfig& cfg,
                   Rng& rng) {
    cfg.validate();
    constexpr double kCollapsedVar = 1e-6;
    const int d = model.z_dim();
    const int K = data.num_factors();

    const Vec<double> stds = detail::global_latent_stds(model, data, cfg.global_stat_samples, rng);
    std::vector<int> active;
    for (int j = 0; j < d; ++j)
        if (stds[j] * stds[j] >= kCollapsedVar) active.push_back(j);
    require(!active.empty(), "fvae_metric: every latent dimension has collapsed");

    std::vector<Vote> votes;
    votes.reserve(static_cast<std::size_t>(cfg.votes));
    Mat<T> mean, logvar;
    for (int v = 0; v < cfg.votes; ++v) {
        const int k = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(K)));
        const ObservationBatch<T> batch = data.sample_fixed_factor(cfg.batch_per_vote, k, rng);
        model.encode(batch, mean, logvar);
        int best_dim = -1;
        double best_var = 0.0;
        for (int j : active) {
            double s = 0.0, ss = 0.0;
            for (int i = 0; i < cfg.batch_per_vote; ++i) {
                const double z = static_cast<double>(mean(j, i)) / stds[j];
                s += z;
                ss += z * z;
            }
            const double dn = static_cast<double>(cfg.batch_per_vote);
            const double var = std::max(0.0, ss / dn - (s / dn) * (s / dn));
            if (best_dim < 0 || var < best_var) {
                best_dim = j;
                best_var = var;
            }
        }
        votes.push_back(Vote{best_dim, k});
    }

    const auto train_count =
        static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(cfg.votes)));
    require(train_count >= 1 && train_count < votes.size(), "fvae_metric: vote split leaves an empty side");
    const std::vector<Vote> train(votes.begin(), votes.begin() + static_cast<std::ptrdiff_t>(train_count));
    const std::vector<Vote> test(votes.begin() + static_cast<std::ptrdiff_t>(train_count), votes.end());
    return fvae_accuracy(train, test, d, K);
}

}  // namespace davalab::metrics
