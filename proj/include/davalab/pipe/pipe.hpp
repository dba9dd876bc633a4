#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"
#include "davalab/nn/optim.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/train/dava.hpp"
#include "davalab/vae/losses.hpp"
#include "davalab/vae/model.hpp"
#include "davalab/vae/networks.hpp"

// PIPE: an unsupervised disentanglement score. For a disentangled model the
// aggregate posterior factorizes across latent dimensions, so observations
// decoded from dimension-wise independent ("factorial") latent codes should
// be indistinguishable from ordinary reconstructions. The metric builds one
// sample set of each kind, trains a fresh discriminator to separate them,
// and reports 2 * (1 - test accuracy): 1.0 when the two sets cannot be told
// apart, 0.0 when the factorial samples are trivially recognizable.
namespace davalab::pipe {

inline constexpr int kRangeEstimationSamples = 2048;  // encoding pass for per-dim ranges
inline constexpr int kSamplerChunk = 256;             // model batch size while building sets
inline constexpr int kCollapseDraws = 64;             // prior draws for the collapse probe
inline constexpr double kCollapseThreshold = 1e-8;    // output variance below this = collapsed

struct PipeConfig {
    int set_size = 12800;         // observations per class
    double train_fraction = 0.9;  // per-class train share; the remainder is the test split
    long disc_steps = 10000;      // discriminator minibatch steps
    int disc_batch = 64;          // minibatch size, split evenly between the classes
    std::string fp_sampler = "uniform-range";  // "uniform-range" | "permute"

    void validate() const {
        require(set_size >= 2, "PipeConfig: set_size must be at least 2");
        require(train_fraction > 0.0 && train_fraction < 1.0,
                "PipeConfig: train_fraction must lie strictly between 0 and 1");
        require(disc_steps >= 1, "PipeConfig: disc_steps must be at least 1");
        require(disc_batch >= 2 && disc_batch % 2 == 0, "PipeConfig: disc_batch must be even and at least 2");
        require(fp_sampler == "uniform-range" || fp_sampler == "permute",
                "PipeConfig: fp_sampler must be \"uniform-range\" or \"permute\"");
    }
};

struct PipeResult {
    double score = 0.0;          // 2 * (1 - test_accuracy), unclamped
    double test_accuracy = 0.0;
    int set_size = 0;            // per class
    int train_size = 0;          // per class
    int test_size = 0;           // per class
    std::string sampler;
    std::uint64_t seed = 0;
};

// Paired observation sets the metric discriminator is trained on.
template <typename T>
struct SampleSets {
    ObservationBatch<T> s_ep;  // reconstructions of real observations
    ObservationBatch<T> s_fp;  // decodes of factorial latent codes
    std::string provenance;    // which sampler produced s_fp
};

inline double score_from_accuracy(double accuracy) { return 2.0 * (1.0 - accuracy); }

namespace detail {

template <typename T>
void check_model_matches(const vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data) {
    require(data.height() == data.width(), "pipe: dataset images must be square");
    require(model.image_size() == data.height() && model.channels() == data.channels(),
            "pipe: model and dataset image shapes differ");
}

template <typename T>
void append_batch(ObservationBatch<T>& acc, const ObservationBatch<T>& chunk) {
    if (acc.n == 0) {
        acc = chunk;
    } else {
        require(acc.height == chunk.height && acc.width == chunk.width && acc.channels == chunk.channels,
                "pipe: sampler chunks changed shape");
        acc.images.insert(acc.images.end(), chunk.images.begin(), chunk.images.end());
        acc.n += chunk.n;
    }
    // decoded sets carry no ground-truth labels
    acc.factors.clear();
    acc.num_factors = 0;
}

// Copies the chosen samples of a feature-major set into a contiguous
// feature-major minibatch, starting at sample slot dst_at.
template <typename T>
void gather_samples(const Mat<T>& src, int hw, const int* ids, int count, Mat<T>& dst, int dst_at) {
    for (int i = 0; i < count; ++i)
        dst.middleCols(static_cast<Eigen::Index>(dst_at + i) * hw, hw) =
            src.middleCols(static_cast<Eigen::Index>(ids[i]) * hw, hw);
}

}  // namespace detail

// Reconstructions x-hat = decode(z), z sampled from the posterior q(z|x) of
// freshly drawn real observations (the empirical posterior set).
template <typename T>
ObservationBatch<T> sample_ep(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int n, Rng& rng) {
    require(n >= 1, "sample_ep: n must be positive");
    detail::check_model_matches(model, data);
    ObservationBatch<T> out;
    Mat<T> mean, logvar, z, noise;
    ObservationBatch<T> decoded;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const ObservationBatch<T> real = data.sample_batch(m, rng);
        model.encode(real, mean, logvar);
        vae::reparameterize(mean, logvar, rng, z, noise);
        model.decode(z, decoded);
        detail::append_batch(out, decoded);
    }
    return out;
}

// Factorial samples by permutation: encode a batch of real observations,
// independently permute every latent dimension across the batch, decode.
template <typename T>
ObservationBatch<T> sample_fp_permute(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int n,
                                      Rng& rng) {
    require(n >= 2, "sample_fp_permute: need at least two samples to permute across");
    detail::check_model_matches(model, data);

    Mat<T> zall(model.z_dim(), n);
    Mat<T> mean, logvar, z, noise;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const ObservationBatch<T> real = data.sample_batch(m, rng);
        model.encode(real, mean, logvar);
        vae::reparameterize(mean, logvar, rng, z, noise);
        zall.middleCols(done, m) = z;
    }
    const Mat<T> zperm = train::permute_dims(zall, rng);

    ObservationBatch<T> out;
    ObservationBatch<T> decoded;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const Mat<T> zc = zperm.middleCols(done, m);
        model.decode(zc, decoded);
        detail::append_batch(out, decoded);
    }
    return out;
}

// Per-dimension [min, max] of posterior samples over an encoding pass.
template <typename T>
std::vector<std::pair<T, T>> estimate_latent_ranges(vae::LatentModel<T>& model,
                                                    const synthdata::FactorDataset<T>& data, Rng& rng,
                                                    int n = kRangeEstimationSamples) {
    require(n >= 1, "estimate_latent_ranges: n must be positive");
    std::vector<std::pair<T, T>> ranges(
        static_cast<std::size_t>(model.z_dim()),
        {std::numeric_limits<T>::max(), std::numeric_limits<T>::lowest()});
    Mat<T> mean, logvar, z, noise;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const ObservationBatch<T> real = data.sample_batch(m, rng);
        model.encode(real, mean, logvar);
        vae::reparameterize(mean, logvar, rng, z, noise);
        for (std::size_t j = 0; j < ranges.size(); ++j) {
            ranges[j].first = std::min(ranges[j].first, z.row(static_cast<Eigen::Index>(j)).minCoeff());
            ranges[j].second = std::max(ranges[j].second, z.row(static_cast<Eigen::Index>(j)).maxCoeff());
        }
    }
    return ranges;
}

// Latent codes drawn dimension-wise i.i.d. uniform inside the given ranges;
// a degenerate range pins its dimension to the single observed value.
template <typename T>
Mat<T> uniform_in_ranges(const std::vector<std::pair<T, T>>& ranges, int n, Rng& rng) {
    Mat<T> z(static_cast<Eigen::Index>(ranges.size()), n);
    for (std::size_t j = 0; j < ranges.size(); ++j) {
        const auto [lo, hi] = ranges[j];
        for (int i = 0; i < n; ++i)
            z(static_cast<Eigen::Index>(j), i) =
                lo == hi ? lo : static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }
    return z;
}

// Factorial samples from a uniform factorial code distribution: estimate
// every dimension's range from an encoding pass, then decode i.i.d. uniform
// draws inside those ranges.
template <typename T>
ObservationBatch<T> sample_fp_uniform(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int n,
                                      Rng& rng) {
    require(n >= 1, "sample_fp_uniform: n must be positive");
    detail::check_model_matches(model, data);
    const auto ranges = estimate_latent_ranges(model, data, rng);
    const Mat<T> zall = uniform_in_ranges(ranges, n, rng);

    ObservationBatch<T> out;
    ObservationBatch<T> decoded;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const Mat<T> zc = zall.middleCols(done, m);
        model.decode(zc, decoded);
        detail::append_batch(out, decoded);
    }
    return out;
}

template <typename T>
SampleSets<T> build_sample_sets(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data,
                                const PipeConfig& cfg, Rng& rng_ep, Rng& rng_fp) {
    SampleSets<T> sets;
    sets.s_ep = sample_ep(model, data, cfg.set_size, rng_ep);
    sets.s_fp = cfg.fp_sampler == "permute" ? sample_fp_permute(model, data, cfg.set_size, rng_fp)
                                            : sample_fp_uniform(model, data, cfg.set_size, rng_fp);
    sets.provenance = cfg.fp_sampler;
    return sets;
}

// Random per-class train/test split; applying it to both classes with the
// same fraction keeps every split balanced.
struct SplitIndices {
    std::vector<int> train, test;
};

inline SplitIndices balanced_split(int set_size, double train_fraction, Rng& rng) {
    const int train_count = static_cast<int>(set_size * train_fraction);
    require(train_count >= 1 && train_count < set_size,
            "balanced_split: train_fraction leaves an empty train or test split");
    const auto perm = rng.permutation(static_cast<std::size_t>(set_size));
    SplitIndices s;
    s.train.reserve(train_count);
    s.test.reserve(set_size - train_count);
    for (int i = 0; i < set_size; ++i)
        (i < train_count ? s.train : s.test).push_back(static_cast<int>(perm[static_cast<std::size_t>(i)]));
    return s;
}

// The full metric: build both sample sets, train a fresh discriminator
// (the encoder's conv ladder without instance norm, hard labels, no
// gradient clipping) on balanced minibatches of the train split, evaluate
// once on the full test split, and report 2 * (1 - accuracy).
template <typename T>
PipeResult pipe(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, const PipeConfig& cfg,
                std::uint64_t seed) {
    cfg.validate();
    detail::check_model_matches(model, data);

    Rng root(seed);
    Rng rng_ep = root.split(1), rng_fp = root.split(2), rng_split = root.split(3);
    Rng rng_init = root.split(4), rng_batch = root.split(5);

    SampleSets<T> sets = build_sample_sets(model, data, cfg, rng_ep, rng_fp);
    const int hw = data.height() * data.width();
    Mat<T> ep, fp;
    to_feature_major(sets.s_ep, ep);
    std::vector<T>().swap(sets.s_ep.images);
    to_feature_major(sets.s_fp, fp);
    std::vector<T>().swap(sets.s_fp.images);

    const SplitIndices split_ep = balanced_split(cfg.set_size, cfg.train_fraction, rng_split);
    const SplitIndices split_fp = balanced_split(cfg.set_size, cfg.train_fraction, rng_split);

    vae::NetworkConfig ncfg;
    ncfg.image_size = data.height();
    ncfg.channels = data.channels();
    vae::Discriminator<T> disc;
    disc.init(ncfg, /*instance_norm=*/false, rng_init);
    auto params = disc.params();
    nn::Adam<T> opt(nn::AdamConfig{});  // lr 1e-4, betas (0.9, 0.999), eps 1e-8

    const int half = cfg.disc_batch / 2;
    Mat<T> minibatch(data.channels(), static_cast<Eigen::Index>(cfg.disc_batch) * hw);
    Mat<T> logits_ep, logits_fp, dl_ep, dl_fp, dmix;
    std::vector<int> pick(static_cast<std::size_t>(half));
    for (long s = 0; s < cfg.disc_steps; ++s) {
        for (int i = 0; i < half; ++i)
            pick[static_cast<std::size_t>(i)] =
                split_ep.train[static_cast<std::size_t>(rng_batch.uniform_int(split_ep.train.size()))];
        detail::gather_samples(ep, hw, pick.data(), half, minibatch, 0);
        for (int i = 0; i < half; ++i)
            pick[static_cast<std::size_t>(i)] =
                split_fp.train[static_cast<std::size_t>(rng_batch.uniform_int(split_fp.train.size()))];
        detail::gather_samples(fp, hw, pick.data(), half, minibatch, half);

        const Mat<T>& logits = disc.forward(minibatch);
        logits_ep = logits.leftCols(half);
        logits_fp = logits.rightCols(half);
        const vae::DiscLoss dl = vae::discriminator_loss(logits_ep, logits_fp, /*label_smoothing=*/0.0);
        if (!std::isfinite(dl.loss))
            throw std::runtime_error("pipe: non-finite discriminator loss at step " + std::to_string(s + 1));

        vae::discriminator_loss_backward(logits_ep, logits_fp, 0.0, dl_ep, dl_fp);
        dmix.resize(1, cfg.disc_batch);
        dmix.leftCols(half) = dl_ep;
        dmix.rightCols(half) = dl_fp;
        nn::zero_grads(params);
        disc.backward(dmix, /*want_dx=*/false);
        opt.step(params);
    }

    // single evaluation over the full test split; ties count half
    double hits = 0.0;
    Mat<T> buf;
    auto eval_class = [&](const Mat<T>& src, const std::vector<int>& ids, bool expect_positive) {
        for (std::size_t at = 0; at < ids.size(); at += kSamplerChunk) {
            const int m = static_cast<int>(std::min<std::size_t>(kSamplerChunk, ids.size() - at));
            buf.resize(data.channels(), static_cast<Eigen::Index>(m) * hw);
            detail::gather_samples(src, hw, ids.data() + at, m, buf, 0);
            const Mat<T>& logits = disc.forward(buf);
            for (int i = 0; i < m; ++i) {
                const T l = logits(0, i);
                if (l == T(0))
                    hits += 0.5;
                else if ((l > T(0)) == expect_positive)
                    hits += 1.0;
            }
        }
    };
    eval_class(ep, split_ep.test, true);
    eval_class(fp, split_fp.test, false);
    const double accuracy = hits / static_cast<double>(split_ep.test.size() + split_fp.test.size());

    PipeResult r;
    r.test_accuracy = accuracy;
    r.score = score_from_accuracy(accuracy);
    r.set_size = cfg.set_size;
    r.train_size = static_cast<int>(split_ep.train.size());
    r.test_size = static_cast<int>(split_ep.test.size());
    r.sampler = cfg.fp_sampler;
    r.seed = seed;
    return r;
}

// Mean per-pixel variance of decoder outputs across random prior draws; a
// decoder that ignores its latent code scores (numerically) zero.
template <typename T>
double decoder_output_variance(vae::LatentModel<T>& model, Rng& rng, int draws = kCollapseDraws) {
    require(draws >= 2, "decoder_output_variance: need at least two draws");
    Mat<T> z(model.z_dim(), draws);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<T>(rng.normal());
    ObservationBatch<T> out;
    model.decode(z, out);
    const std::size_t px = out.image_size();
    double total = 0.0;
    for (std::size_t p = 0; p < px; ++p) {
        double m = 0.0, m2 = 0.0;
        for (int i = 0; i < draws; ++i) {
            const double v = static_cast<double>(out.image(i)[p]);
            m += v;
            m2 += v * v;
        }
        m /= draws;
        total += std::max(0.0, m2 / draws - m * m);
    }
    return total / static_cast<double>(px);
}

template <typename T>
bool is_collapsed(vae::LatentModel<T>& model, Rng& rng) {
    return decoder_output_variance(model, rng) < kCollapseThreshold;
}

// Mean per-pixel squared reconstruction error over freshly sampled
// observations, with posterior-sampled codes (the same convention the EP
// set uses).
template <typename T>
double reconstruction_mse(vae::LatentModel<T>& model, const synthdata::FactorDataset<T>& data, int n, Rng& rng) {
    require(n >= 1, "reconstruction_mse: n must be positive");
    detail::check_model_matches(model, data);
    Mat<T> mean, logvar, z, noise;
    ObservationBatch<T> decoded;
    double se = 0.0;
    std::size_t count = 0;
    for (int done = 0; done < n; done += kSamplerChunk) {
        const int m = std::min(kSamplerChunk, n - done);
        const ObservationBatch<T> real = data.sample_batch(m, rng);
        model.encode(real, mean, logvar);
        vae::reparameterize(mean, logvar, rng, z, noise);
        model.decode(z, decoded);
        for (std::size_t i = 0; i < real.images.size(); ++i) {
            const double d = static_cast<double>(real.images[i]) - static_cast<double>(decoded.images[i]);
            se += d * d;
        }
        count += real.images.size();
    }
    return se / static_cast<double>(count);
}

// Reconstruction-penalized score: the raw score minus alpha times the
// model's reconstruction error normalized over the evaluated population.
inline double pipe_rec(double pipe_score, double rec, const std::vector<double>& population, double alpha) {
    require(!population.empty(), "pipe_rec: population must not be empty");
    require(alpha >= 0.0, "pipe_rec: alpha must be non-negative");
    const auto [lo_it, hi_it] = std::minmax_element(population.begin(), population.end());
    const double lo = *lo_it, hi = *hi_it;
    const double rec_norm = hi > lo ? (rec - lo) / (hi - lo) : 0.0;
    return pipe_score - alpha * rec_norm;
}

}  // namespace davalab::pipe
