#pragma once

#include <cmath>
#include <stdexcept>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"

namespace davalab::vae {

inline double softplus(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct ReconLoss {
    double cross_entropy = 0.0;  // summed over pixels, mean over the batch
    double mse = 0.0;            // per-pixel mean squared error
};

// Bernoulli reconstruction loss between targets x and decoder means x_hat,
// both with values in [0, 1]. Cross-entropy inputs are clipped to
// [1e-6, 1 - 1e-6]; the MSE is computed on the raw values.
template <typename T>
ReconLoss reconstruction_loss(const T* x, const T* x_hat, std::size_t count, int batch) {
    constexpr double kClip = 1e-6;
    double ce = 0.0, se = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double t = x[i];
        const double p = x_hat[i];
        if (!(t >= 0.0 && t <= 1.0) || !(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("reconstruction_loss: values outside [0, 1]");
        const double pc = std::min(1.0 - kClip, std::max(kClip, p));
        ce -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
        const double d = t - p;
        se += d * d;
    }
    ReconLoss out;
    out.cross_entropy = ce / batch;
    out.mse = se / static_cast<double>(count);
    return out;
}

template <typename T>
ReconLoss reconstruction_loss(const Mat<T>& x, const Mat<T>& x_hat, int batch) {
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    return reconstruction_loss(x.data(), x_hat.data(), static_cast<std::size_t>(x.size()), batch);
}

template <typename T>
ReconLoss reconstruction_loss(const ObservationBatch<T>& x, const ObservationBatch<T>& x_hat) {
    if (x.images.size() != x_hat.images.size())
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    return reconstruction_loss(x.images.data(), x_hat.images.data(), x.images.size(), x.n);
}

// The same Bernoulli objective evaluated from decoder logits; numerically
// stable for saturated pixels and therefore the form used inside training.
// Writes d(loss)/d(logits) if a gradient buffer is given, and the per-pixel
// MSE of the Bernoulli means if mse_out is given (reusing the same sigmoid
// pass). Uses x softplus(-l) + (1-x) softplus(l) = softplus(l) - x l.
template <typename T>
double reconstruction_bce_from_logits(const Mat<T>& x, const Mat<T>& logits, int batch,
                                      Mat<T>* dlogits, double* mse_out = nullptr) {
    if (x.rows() != logits.rows() || x.cols() != logits.cols())
        throw std::invalid_argument("reconstruction_bce_from_logits: shape mismatch");
    auto l = logits.array();
    auto t = x.array();
    const double loss =
        (l.max(T(0)) + (T(1) + (-l.abs()).exp()).log() - t * l).template cast<double>().sum() / batch;
    if (dlogits) {
        dlogits->resize(logits.rows(), logits.cols());
        dlogits->array() = (T(1) / (T(1) + (-l).exp()) - t) * static_cast<T>(1.0 / batch);
        if (mse_out)
            *mse_out = dlogits->template cast<double>().array().square().sum() *
                       static_cast<double>(batch) * batch / static_cast<double>(logits.size());
    } else if (mse_out) {
        *mse_out = (T(1) / (T(1) + (-l).exp()) - t).template cast<double>().square().sum() /
                   static_cast<double>(logits.size());
    }
    return loss;
}

struct KlResult {
    Eigen::VectorXd per_dim;  // batch-mean KL per latent dimension
    double total = 0.0;       // sum over dimensions
};

// Analytic KL(q || p) between the diagonal Gaussian posterior
// N(mean, exp(logvar)) and the standard normal prior, per dimension:
// KL_j = 1/2 (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1), averaged over the
// batch. mean and logvar are [z_dim x n].
template <typename T>
KlResult kl_divergence(const Mat<T>& mean, const Mat<T>& logvar) {
    if (mean.rows() != logvar.rows() || mean.cols() != logvar.cols())
        throw std::invalid_argument("kl_divergence: mismatched shapes");
    const Eigen::Index d = mean.rows(), n = mean.cols();
    KlResult out;
    out.per_dim.setZero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = mean(j, i);
            const double lv = logvar(j, i);
            acc += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
        }
        out.per_dim(j) = acc / static_cast<double>(n);
        out.total += out.per_dim(j);
    }
    return out;
}

// Accumulates scale * d(total KL)/d(mean, logvar) into the given buffers.
template <typename T>
void kl_backward(const Mat<T>& mean, const Mat<T>& logvar, double scale, Mat<T>& dmean, Mat<T>& dlogvar) {
    const double s = scale / static_cast<double>(mean.cols());
    dmean.array() += (mean.template cast<double>().array() * s).template cast<T>();
    dlogvar.array() += ((logvar.template cast<double>().array().exp() - 1.0) * (0.5 * s)).template cast<T>();
}

// Capacity penalty |kl - C|^e for e in {1, 4} (the gamma multiplier is the
// caller's).
inline double capacity_loss(double kl_total, double capacity, int exponent) {
    const double d = kl_total - capacity;
    switch (exponent) {
        case 1: return std::abs(d);
        case 4: return (d * d) * (d * d);
        default: throw std::invalid_argument("capacity_loss: exponent must be 1 or 4");
    }
}

inline double capacity_loss_dkl(double kl_total, double capacity, int exponent) {
    const double d = kl_total - capacity;
    switch (exponent) {
        case 1: return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        case 4: return 4.0 * d * d * d;
        default: throw std::invalid_argument("capacity_loss: exponent must be 1 or 4");
    }
}

struct DiscLoss {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Binary cross-entropy of the discriminator on a mixed batch: reconstructed
// samples carry target (1 - eps), generated samples carry target eps.
// Accuracy is measured against the hard labels at probability threshold 0.5;
// a tie (logit exactly 0) contributes half a hit, so a constant-0.5
// discriminator scores exactly 0.5.
template <typename T>
DiscLoss discriminator_loss(const Mat<T>& logits_rec, const Mat<T>& logits_gen, double label_smoothing) {
    const Eigen::Index n_rec = logits_rec.size(), n_gen = logits_gen.size();
    if (n_rec == 0 || n_gen == 0)
        throw std::invalid_argument("discriminator_loss: empty batch");
    const double t_rec = 1.0 - label_smoothing;
    const double t_gen = label_smoothing;
    double loss = 0.0, hits = 0.0;
    for (Eigen::Index i = 0; i < n_rec; ++i) {
        const double l = logits_rec.data()[i];
        loss += t_rec * softplus(-l) + (1.0 - t_rec) * softplus(l);
        hits += l > 0 ? 1.0 : (l == 0 ? 0.5 : 0.0);
    }
    for (Eigen::Index i = 0; i < n_gen; ++i) {
        const double l = logits_gen.data()[i];
        loss += t_gen * softplus(-l) + (1.0 - t_gen) * softplus(l);
        hits += l < 0 ? 1.0 : (l == 0 ? 0.5 : 0.0);
    }
    DiscLoss out;
    out.loss = loss / static_cast<double>(n_rec + n_gen);
    out.accuracy = hits / static_cast<double>(n_rec + n_gen);
    return out;
}

// d(discriminator_loss)/d(logits) for both halves of the mixed batch.
template <typename T>
void discriminator_loss_backward(const Mat<T>& logits_rec, const Mat<T>& logits_gen, double label_smoothing,
                                 Mat<T>& dlogits_rec, Mat<T>& dlogits_gen) {
    const double t_rec = 1.0 - label_smoothing;
    const double t_gen = label_smoothing;
    const double inv = 1.0 / static_cast<double>(logits_rec.size() + logits_gen.size());
    dlogits_rec.resize(logits_rec.rows(), logits_rec.cols());
    dlogits_gen.resize(logits_gen.rows(), logits_gen.cols());
    for (Eigen::Index i = 0; i < logits_rec.size(); ++i)
        dlogits_rec.data()[i] = static_cast<T>((sigmoid(logits_rec.data()[i]) - t_rec) * inv);
    for (Eigen::Index i = 0; i < logits_gen.size(); ++i)
        dlogits_gen.data()[i] = static_cast<T>((sigmoid(logits_gen.data()[i]) - t_gen) * inv);
}

// mean_i log sigmoid(l_i); used by the encoder-side adversarial term.
// Writes scale * d/dl into dlogits when given.
template <typename T>
double mean_log_sigmoid(const Mat<T>& logits, double scale, Mat<T>* dlogits) {
    const double inv = 1.0 / static_cast<double>(logits.size());
    double acc = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double l = logits.data()[i];
        acc -= softplus(-l);
        if (dlogits) dlogits->data()[i] = static_cast<T>(scale * (1.0 - sigmoid(l)) * inv);
    }
    return acc * inv;
}

// mean_i log(1 - sigmoid(l_i)); the decoder-side adversarial term.
template <typename T>
double mean_log_one_minus_sigmoid(const Mat<T>& logits, double scale, Mat<T>* dlogits) {
    const double inv = 1.0 / static_cast<double>(logits.size());
    double acc = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double l = logits.data()[i];
        acc -= softplus(l);
        if (dlogits) dlogits->data()[i] = static_cast<T>(-scale * sigmoid(l) * inv);
    }
    return acc * inv;
}

// Accumulates the reparameterization chain rule into (dmean, dlogvar):
// z = mean + exp(logvar/2) * noise, so dz/dmean = 1 and
// dz/dlogvar = z_noise_part / 2.
template <typename T>
void reparam_backward(const Mat<T>& dz, const Mat<T>& logvar, const Mat<T>& noise, Mat<T>& dmean, Mat<T>& dlogvar) {
    dmean.array() += dz.array();
    dlogvar.array() += dz.array() * noise.array() * (logvar.array() * T(0.5)).exp() * T(0.5);
}

// z = mean + exp(logvar / 2) * noise with noise ~ N(0, I). The drawn noise
// is returned so gradients can be propagated through the sample.
template <typename T>
void reparameterize(const Mat<T>& mean, const Mat<T>& logvar, Rng& rng, Mat<T>& z, Mat<T>& noise) {
    if (mean.rows() != logvar.rows() || mean.cols() != logvar.cols())
        throw std::invalid_argument("reparameterize: mismatched shapes");
    z.resize(mean.rows(), mean.cols());
    noise.resize(mean.rows(), mean.cols());
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double n = rng.normal();
        noise.data()[i] = static_cast<T>(n);
        z.data()[i] = static_cast<T>(mean.data()[i] + std::exp(0.5 * logvar.data()[i]) * n);
    }
}

}  // namespace davalab::vae
