#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"
#include "davalab/nn/optim.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/vae/losses.hpp"
#include "davalab/vae/networks.hpp"

namespace davalab::train {

struct DavaConfig {
    vae::NetworkConfig network;

    double gamma = 500.0;          // capacity penalty weight
    int capacity_exponent = 4;     // |kl - C|^e, e in {1, 4}
    double delta_c = 4e-5;         // capacity step per train step
    double grace_band = 0.51;      // accuracy in (0.5, grace] leaves C alone
    double mu_enc = 0.3;
    double mu_dec = 0.001;
    double label_smoothing = 0.1;

    int batch_size = 128;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double max_grad_norm = 1.0;

    long total_steps = 150000;
    long log_interval = 100;       // c-trajectory / diagnostics cadence
    long checkpoint_interval = 0;  // 0 = final checkpoint only

    nn::AdamConfig adam() const {
        return {.lr = learning_rate, .beta1 = adam_beta1, .beta2 = adam_beta2, .eps = adam_eps};
    }
};

// Capacity controller: the discriminator's accuracy on the current batch
// decides whether the KL budget C grows, holds, or shrinks (never below 0).
inline double update_capacity(double c, double accuracy, double delta_c, double grace_band = 0.51) {
    if (accuracy <= 0.5) return c + delta_c;
    if (accuracy <= grace_band) return c;
    return std::max(c - delta_c, 0.0);
}

// Adversarial pressure grows linearly in the discriminator's edge over
// chance: 0 at accuracy 0.5, 50 at accuracy 1.0.
inline double mu_base(double accuracy) {
    return std::max((accuracy - 0.5) * 100.0, 0.0);
}

// Copy of the [d x n] latent batch with each latent dimension (row)
// independently permuted across the batch. Destroys within-sample
// correlations while preserving every dimension's multiset of values.
template <typename T>
Mat<T> permute_dims(const Mat<T>& z, Rng& rng) {
    Mat<T> out(z.rows(), z.cols());
    const std::size_t n = static_cast<std::size_t>(z.cols());
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        const auto perm = rng.permutation(n);
        for (std::size_t i = 0; i < n; ++i) out(j, static_cast<Eigen::Index>(i)) = z(j, static_cast<Eigen::Index>(perm[i]));
    }
    return out;
}

struct StepDiagnostics {
    long step = 0;
    double recon_ce = 0.0;         // Bernoulli cross-entropy (training objective part)
    double recon_mse = 0.0;        // per-pixel mean squared error
    double kl_total = 0.0;
    std::vector<double> kl_per_dim;
    double capacity_term = 0.0;    // |kl - C|^e before the gamma weight
    double disc_loss = 0.0;
    double disc_accuracy = 0.0;
    double mu_base = 0.0;
    double capacity = 0.0;         // C after the update
    double grad_norm_vae = 0.0;    // post-clip norms
    double grad_norm_disc = 0.0;
    double grad_norm_adv_enc = 0.0;
    double grad_norm_adv_dec = 0.0;

    std::string dump() const {
        std::ostringstream os;
        os << "step=" << step << " recon_ce=" << recon_ce << " recon_mse=" << recon_mse
           << " kl=" << kl_total << " capacity_term=" << capacity_term << " disc_loss=" << disc_loss
           << " disc_acc=" << disc_accuracy << " mu_base=" << mu_base << " C=" << capacity
           << " |g_vae|=" << grad_norm_vae << " |g_disc|=" << grad_norm_disc
           << " |g_adv_enc|=" << grad_norm_adv_enc << " |g_adv_dec|=" << grad_norm_adv_dec;
        return os.str();
    }
};

// Raised when a loss turns non-finite; carries the offending step's
// diagnostics so the failure is inspectable.
class TrainDivergence : public std::runtime_error {
public:
    TrainDivergence(const std::string& what, StepDiagnostics diag)
        : std::runtime_error(what + " | " + diag.dump()), diagnostics(std::move(diag)) {}
    StepDiagnostics diagnostics;
};

// Test seam: lets a caller replace the measured discriminator accuracy
// before it drives the capacity controller and the adversarial pressure.
struct StepHooks {
    std::function<double(double)> accuracy_override;
};

// Everything one training run owns: the three networks, their optimizers,
// the capacity state, and the derived random streams. Value-semantic: a
// copy is an independent training state.
template <typename T>
struct TrainState {
    DavaConfig cfg;
    std::string architecture = "dava";
    double beta = 1.0;  // used by the beta-VAE trainer only
    std::uint64_t seed = 0;

    vae::Encoder<T> encoder;
    vae::Decoder<T> decoder;
    vae::Discriminator<T> disc;
    nn::Adam<T> opt_vae, opt_disc, opt_adv_enc, opt_adv_dec;

    double capacity = 0.0;
    long step = 0;
    Rng rng_data, rng_noise, rng_perm;

    std::vector<std::pair<long, double>> c_trajectory;   // (step, C)
    std::vector<StepDiagnostics> history;                // every log_interval

    // scratch
    Mat<T> x, z, noise, z2, noise2, z_perm, x_hat, x_tilde, disc_in;
    Mat<T> dmean, dlogvar, dlogits, logits_rec, logits_gen, dl_rec, dl_gen, dmix, dadv, dxhat_grad;

    std::vector<nn::Param<T>> vae_params() {
        auto p = encoder.params();
        auto d = decoder.params();
        p.insert(p.end(), d.begin(), d.end());
        return p;
    }
};

template <typename T>
TrainState<T> make_train_state(const DavaConfig& cfg, std::uint64_t seed, const std::string& architecture = "dava") {
    if (cfg.capacity_exponent != 1 && cfg.capacity_exponent != 4)
        throw std::invalid_argument("DavaConfig: capacity_exponent must be 1 or 4");
    TrainState<T> s;
    s.cfg = cfg;
    s.seed = seed;
    s.architecture = architecture;
    Rng root(seed);
    Rng r_enc = root.split(1), r_dec = root.split(2), r_disc = root.split(3);
    s.encoder.init(cfg.network, r_enc);
    s.decoder.init(cfg.network, r_dec);
    s.disc.init(cfg.network, /*instance_norm=*/true, r_disc);
    s.opt_vae = nn::Adam<T>(cfg.adam());
    s.opt_disc = nn::Adam<T>(cfg.adam());
    s.opt_adv_enc = nn::Adam<T>(cfg.adam());
    s.opt_adv_dec = nn::Adam<T>(cfg.adam());
    s.rng_data = root.split(4);
    s.rng_noise = root.split(5);
    s.rng_perm = root.split(6);
    return s;
}

// One full adaptive-adversarial step:
//  (1) VAE update on reconstruction + gamma * |KL - C|^e,
//  (2) re-encode and re-decode the batch with the updated weights,
//  (3) decode a dimension-permuted copy of the fresh latents,
//  (4) discriminator accuracy on reconstructed-vs-permuted (pre-update),
//  (5) discriminator update with label smoothing,
//  (6) capacity update from the accuracy,
//  (7) if the discriminator is ahead, adversarial encoder/decoder updates
//      against the freshly updated discriminator, both gradients taken at
//      the same parameter point and clipped independently.
template <typename T>
StepDiagnostics train_step(TrainState<T>& st, const ObservationBatch<T>& batch, const StepHooks* hooks = nullptr) {
    const DavaConfig& cfg = st.cfg;
    const int n = batch.n;
    if (n < 1) throw std::invalid_argument("train_step: empty batch");
    to_feature_major(batch, st.x);

    StepDiagnostics d;
    d.step = st.step + 1;

    // (1) VAE update
    st.encoder.forward(st.x);
    vae::reparameterize(st.encoder.mean, st.encoder.logvar, st.rng_noise, st.z, st.noise);
    const Mat<T>& logits = st.decoder.forward(st.z);
    d.recon_ce = vae::reconstruction_bce_from_logits(st.x, logits, n, &st.dlogits, &d.recon_mse);
    const vae::KlResult kl = vae::kl_divergence(st.encoder.mean, st.encoder.logvar);
    d.kl_total = kl.total;
    d.kl_per_dim.assign(kl.per_dim.data(), kl.per_dim.data() + kl.per_dim.size());
    d.capacity_term = vae::capacity_loss(kl.total, st.capacity, cfg.capacity_exponent);
    const double loss_vae = d.recon_ce + cfg.gamma * d.capacity_term;
    if (!std::isfinite(loss_vae)) throw TrainDivergence("train_step: non-finite VAE loss", d);

    auto vae_params = st.vae_params();
    nn::zero_grads(vae_params);
    const Mat<T>& dz = st.decoder.backward(st.dlogits);
    st.dmean.setZero(st.encoder.mean.rows(), st.encoder.mean.cols());
    st.dlogvar.setZero(st.encoder.logvar.rows(), st.encoder.logvar.cols());
    vae::reparam_backward(dz, st.encoder.logvar, st.noise, st.dmean, st.dlogvar);
    vae::kl_backward(st.encoder.mean, st.encoder.logvar,
                     cfg.gamma * vae::capacity_loss_dkl(kl.total, st.capacity, cfg.capacity_exponent),
                     st.dmean, st.dlogvar);
    st.encoder.backward(st.dmean, st.dlogvar);
    d.grad_norm_vae = nn::clip_grad_norm(vae_params, cfg.max_grad_norm);
    st.opt_vae.step(vae_params);

    // (2) recreate latents and reconstructions with the updated weights
    st.encoder.forward(st.x);
    vae::reparameterize(st.encoder.mean, st.encoder.logvar, st.rng_noise, st.z2, st.noise2);

    // (3) permuted decode first, so the decoder's caches end on the
    //     reconstruction pass that the adversarial gradients flow through
    st.z_perm = permute_dims(st.z2, st.rng_perm);
    st.x_tilde = st.decoder.means(st.z_perm);
    st.x_hat = st.decoder.means(st.z2);

    // (4) discriminator loss and accuracy on the mixed batch, pre-update
    const Eigen::Index cols = st.x_hat.cols();
    st.disc_in.resize(st.x_hat.rows(), 2 * cols);
    st.disc_in.leftCols(cols) = st.x_hat;
    st.disc_in.rightCols(cols) = st.x_tilde;
    const Mat<T>& logits_mix = st.disc.forward(st.disc_in);
    st.logits_rec = logits_mix.leftCols(n);
    st.logits_gen = logits_mix.rightCols(n);
    const vae::DiscLoss dl = vae::discriminator_loss(st.logits_rec, st.logits_gen, cfg.label_smoothing);
    d.disc_loss = dl.loss;
    d.disc_accuracy = dl.accuracy;
    if (!std::isfinite(dl.loss)) throw TrainDivergence("train_step: non-finite discriminator loss", d);

    // (5) discriminator update
    vae::discriminator_loss_backward(st.logits_rec, st.logits_gen, cfg.label_smoothing, st.dl_rec, st.dl_gen);
    st.dmix.resize(1, 2 * n);
    st.dmix.leftCols(n) = st.dl_rec;
    st.dmix.rightCols(n) = st.dl_gen;
    auto disc_params = st.disc.params();
    nn::zero_grads(disc_params);
    st.disc.backward(st.dmix, /*want_dx=*/false);
    d.grad_norm_disc = nn::clip_grad_norm(disc_params, cfg.max_grad_norm);
    st.opt_disc.step(disc_params);

    // (6) capacity update
    const double acc = hooks && hooks->accuracy_override ? hooks->accuracy_override(dl.accuracy) : dl.accuracy;
    st.capacity = update_capacity(st.capacity, acc, cfg.delta_c, cfg.grace_band);
    d.capacity = st.capacity;
    d.mu_base = mu_base(acc);

    // (7) adversarial updates against the post-update discriminator
    if (d.mu_base > 0.0) {
        const Mat<T>& lep = st.disc.forward(st.x_hat);
        auto enc_params = st.encoder.params();
        auto dec_params = st.decoder.params();

        // encoder ascends log D(x̂); the pass only routes gradient through
        // the discriminator and decoder, so their parameter gradients are
        // skipped
        vae::mean_log_sigmoid(lep, d.mu_base * cfg.mu_enc, &st.dadv);
        nn::zero_grads(enc_params);
        nn::zero_grads(dec_params);
        const Mat<T>& dxh_a = st.disc.backward(st.dadv, /*want_dx=*/true, /*want_wgrad=*/false);
        st.dxhat_grad = dxh_a.array() * st.x_hat.array() * (T(1) - st.x_hat.array());
        const Mat<T>& dz_a = st.decoder.backward(st.dxhat_grad, /*want_wgrad=*/false);
        st.dmean.setZero(st.encoder.mean.rows(), st.encoder.mean.cols());
        st.dlogvar.setZero(st.encoder.logvar.rows(), st.encoder.logvar.cols());
        vae::reparam_backward(dz_a, st.encoder.logvar, st.noise2, st.dmean, st.dlogvar);
        st.encoder.backward(st.dmean, st.dlogvar);

        // decoder ascends log(1 - D(x̂)), gradient at the same point
        vae::mean_log_one_minus_sigmoid(lep, d.mu_base * cfg.mu_dec, &st.dadv);
        nn::zero_grads(dec_params);
        const Mat<T>& dxh_b = st.disc.backward(st.dadv, /*want_dx=*/true, /*want_wgrad=*/false);
        st.dxhat_grad = dxh_b.array() * st.x_hat.array() * (T(1) - st.x_hat.array());
        st.decoder.backward(st.dxhat_grad);

        d.grad_norm_adv_enc = nn::clip_grad_norm(enc_params, cfg.max_grad_norm);
        st.opt_adv_enc.step(enc_params);
        d.grad_norm_adv_dec = nn::clip_grad_norm(dec_params, cfg.max_grad_norm);
        st.opt_adv_dec.step(dec_params);
    }

    ++st.step;
    return d;
}

// Checkpoint sink: invoked at every checkpoint interval and once after the
// final step (final=true).
template <typename T>
using CheckpointSink = std::function<void(const TrainState<T>&, bool final)>;

// Runs total_steps adaptive-adversarial steps over freshly sampled batches.
template <typename T>
TrainState<T> train(const synthdata::FactorDataset<T>& data, const DavaConfig& cfg, std::uint64_t seed,
                    const StepHooks* hooks = nullptr, const CheckpointSink<T>& sink = {}) {
    TrainState<T> st = make_train_state<T>(cfg, seed);
    st.c_trajectory.reserve(static_cast<std::size_t>(cfg.total_steps / std::max(1L, cfg.log_interval)) + 2);
    for (long s = 0; s < cfg.total_steps; ++s) {
        const ObservationBatch<T> batch = data.sample_batch(cfg.batch_size, st.rng_data);
        const StepDiagnostics d = train_step(st, batch, hooks);
        if (st.step % std::max(1L, cfg.log_interval) == 0 || st.step == cfg.total_steps) {
            st.c_trajectory.emplace_back(st.step, st.capacity);
            st.history.push_back(d);
        }
        if (sink && cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0 && st.step < cfg.total_steps)
            sink(st, false);
    }
    if (sink) sink(st, true);
    return st;
}

}  // namespace davalab::train
