#pragma once

#include "davalab/train/dava.hpp"

namespace davalab::train {

struct BetaVaeConfig {
    vae::NetworkConfig network;
    double beta = 1.0;

    int batch_size = 128;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double max_grad_norm = 1.0;

    long total_steps = 150000;
    long log_interval = 100;
    long checkpoint_interval = 0;

    // The shared trainer state is keyed on DavaConfig; the adversarial
    // knobs are simply unused by the beta-VAE update.
    DavaConfig as_dava() const {
        DavaConfig d;
        d.network = network;
        d.batch_size = batch_size;
        d.learning_rate = learning_rate;
        d.adam_beta1 = adam_beta1;
        d.adam_beta2 = adam_beta2;
        d.adam_eps = adam_eps;
        d.max_grad_norm = max_grad_norm;
        d.total_steps = total_steps;
        d.log_interval = log_interval;
        d.checkpoint_interval = checkpoint_interval;
        return d;
    }
};

// One plain beta-VAE update: reconstruction + beta * KL, clipped, Adam.
template <typename T>
StepDiagnostics beta_vae_step(TrainState<T>& st, const ObservationBatch<T>& batch, double beta) {
    const int n = batch.n;
    if (n < 1) throw std::invalid_argument("beta_vae_step: empty batch");
    to_feature_major(batch, st.x);

    StepDiagnostics d;
    d.step = st.step + 1;

    st.encoder.forward(st.x);
    vae::reparameterize(st.encoder.mean, st.encoder.logvar, st.rng_noise, st.z, st.noise);
    const Mat<T>& logits = st.decoder.forward(st.z);
    d.recon_ce = vae::reconstruction_bce_from_logits(st.x, logits, n, &st.dlogits, &d.recon_mse);
    const vae::KlResult kl = vae::kl_divergence(st.encoder.mean, st.encoder.logvar);
    d.kl_total = kl.total;
    d.kl_per_dim.assign(kl.per_dim.data(), kl.per_dim.data() + kl.per_dim.size());
    const double loss = d.recon_ce + beta * kl.total;
    if (!std::isfinite(loss)) throw TrainDivergence("beta_vae_step: non-finite loss", d);

    auto params = st.vae_params();
    nn::zero_grads(params);
    const Mat<T>& dz = st.decoder.backward(st.dlogits);
    st.dmean.setZero(st.encoder.mean.rows(), st.encoder.mean.cols());
    st.dlogvar.setZero(st.encoder.logvar.rows(), st.encoder.logvar.cols());
    vae::reparam_backward(dz, st.encoder.logvar, st.noise, st.dmean, st.dlogvar);
    vae::kl_backward(st.encoder.mean, st.encoder.logvar, beta, st.dmean, st.dlogvar);
    st.encoder.backward(st.dmean, st.dlogvar);
    d.grad_norm_vae = nn::clip_grad_norm(params, st.cfg.max_grad_norm);
    st.opt_vae.step(params);

    ++st.step;
    return d;
}

template <typename T>
TrainState<T> train_beta_vae(const synthdata::FactorDataset<T>& data, const BetaVaeConfig& cfg, std::uint64_t seed,
                             const CheckpointSink<T>& sink = {}) {
    TrainState<T> st = make_train_state<T>(cfg.as_dava(), seed, "beta_vae");
    st.beta = cfg.beta;
    for (long s = 0; s < cfg.total_steps; ++s) {
        const ObservationBatch<T> batch = data.sample_batch(cfg.batch_size, st.rng_data);
        const StepDiagnostics d = beta_vae_step(st, batch, cfg.beta);
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
