#pragma once

#include "davalab/core/tensor.hpp"
#include "davalab/vae/losses.hpp"
#include "davalab/vae/networks.hpp"

namespace davalab::vae {

// Minimal encode/decode surface the evaluation metrics run against. Besides
// trained networks this is implemented by the oracle models used in tests.
template <typename T>
class LatentModel {
public:
    virtual ~LatentModel() = default;
    virtual int z_dim() const = 0;
    virtual int image_size() const = 0;
    virtual int channels() const = 0;
    // Posterior parameters [z_dim x n] for a batch of images.
    virtual void encode(const ObservationBatch<T>& x, Mat<T>& mean, Mat<T>& logvar) = 0;
    // Decoder means for latent columns [z_dim x n].
    virtual void decode(const Mat<T>& z, ObservationBatch<T>& out) = 0;
};

// Adapter exposing a trained encoder/decoder pair as a LatentModel.
template <typename T>
class VaeModel : public LatentModel<T> {
public:
    VaeModel(Encoder<T>& enc, Decoder<T>& dec) : enc_(enc), dec_(dec) {}

    int z_dim() const override { return enc_.cfg.z_dim; }
    int image_size() const override { return enc_.cfg.image_size; }
    int channels() const override { return enc_.cfg.channels; }

    void encode(const ObservationBatch<T>& x, Mat<T>& mean, Mat<T>& logvar) override {
        to_feature_major(x, scratch_);
        enc_.forward(scratch_);
        mean = enc_.mean;
        logvar = enc_.logvar;
    }

    void decode(const Mat<T>& z, ObservationBatch<T>& out) override {
        const Mat<T>& means = dec_.means(z);
        from_feature_major(means, static_cast<int>(z.cols()), dec_.cfg.image_size, dec_.cfg.image_size, out);
    }

private:
    Encoder<T>& enc_;
    Decoder<T>& dec_;
    Mat<T> scratch_;
};

}  // namespace davalab::vae
