// Wall-clock probe for the training hot path at the profile sizes.
#include <chrono>
#include <cstdio>

#include "davalab/synthdata/dataset.hpp"
#include "davalab/train/beta_vae.hpp"
#include "davalab/train/dava.hpp"

using namespace davalab;
using Clock = std::chrono::steady_clock;

template <typename F>
double time_per_call(F&& f, int iters) {
    const auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) f();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

int main() {
    for (const auto& [side, batch] : {std::pair{32, 64}, std::pair{64, 128}}) {
        synthdata::SpriteConfig scfg;
        scfg.image_size = side;
        auto data = synthdata::FactorDataset<float>::toysprites(scfg);

        train::DavaConfig cfg;
        cfg.network.image_size = side;
        cfg.network.z_dim = 10;
        cfg.batch_size = batch;
        auto st = train::make_train_state<float>(cfg, 1);

        // warm up and force the adversarial branch by pinning accuracy high
        train::StepHooks hooks;
        hooks.accuracy_override = [](double) { return 1.0; };
        auto b = data.sample_batch(batch, st.rng_data);
        train::train_step(st, b, &hooks);

        const double dava_ms = time_per_call(
            [&] {
                auto bb = data.sample_batch(batch, st.rng_data);
                train::train_step(st, bb, &hooks);
            },
            10);

        train::StepHooks calm;
        calm.accuracy_override = [](double) { return 0.5; };
        const double dava_calm_ms = time_per_call(
            [&] {
                auto bb = data.sample_batch(batch, st.rng_data);
                train::train_step(st, bb, &calm);
            },
            10);

        auto stb = train::make_train_state<float>(cfg, 1, "beta_vae");
        const double bvae_ms = time_per_call(
            [&] {
                auto bb = data.sample_batch(batch, stb.rng_data);
                train::beta_vae_step(stb, bb, 1.0);
            },
            10);

        std::printf("side=%d batch=%d  dava(adv)=%.1f ms  dava(calm)=%.1f ms  beta_vae=%.1f ms\n", side, batch,
                    dava_ms, dava_calm_ms, bvae_ms);
        std::printf("  20k-step run estimate: dava %.1f min, beta_vae %.1f min\n", 20000 * dava_ms / 60000.0,
                    20000 * bvae_ms / 60000.0);
    }
    return 0;
}
