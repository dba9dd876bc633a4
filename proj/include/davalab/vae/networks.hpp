#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"
#include "davalab/nn/layers.hpp"

namespace davalab::vae {

// Convolutional ladder shared by the encoder, decoder and discriminator:
// four 4x4 stride-2 convolutions with channel widths 32/32/64/64, so the
// spatial side shrinks by 16x and must divide evenly.
struct NetworkConfig {
    int image_size = 64;  // square side in pixels
    int channels = 1;
    int z_dim = 10;

    int seed_side() const { return image_size / 16; }

    void validate() const {
        if (image_size < 16 || image_size % 16 != 0)
            throw std::invalid_argument("NetworkConfig: image_size must be a positive multiple of 16");
        if (channels < 1) throw std::invalid_argument("NetworkConfig: channels must be >= 1");
        if (z_dim < 1) throw std::invalid_argument("NetworkConfig: z_dim must be >= 1");
    }
};

inline constexpr int kConvChannels[4] = {32, 32, 64, 64};
inline constexpr int kKernel = 4, kStride = 2, kPad = 1;
inline constexpr int kFcWidth = 256;

// Maps a feature-major image batch to the posterior parameters
// (mean, logvar), each [z_dim x n].
template <typename T>
struct Encoder {
    NetworkConfig cfg;
    nn::Conv2d<T> conv[4];
    nn::ReLU<T> relu[4];
    nn::Flatten<T> flatten;
    nn::Dense<T> fc1, fc2;
    nn::ReLU<T> relu_fc;
    Mat<T> mean, logvar, dhead;

    void init(const NetworkConfig& cfg_, Rng& rng) {
        cfg = cfg_;
        cfg.validate();
        int side = cfg.image_size, c_in = cfg.channels;
        for (int i = 0; i < 4; ++i) {
            conv[i].init(c_in, kConvChannels[i], kKernel, kStride, kPad, side, side, rng);
            c_in = kConvChannels[i];
            side /= 2;
        }
        flatten.init(c_in, side * side);
        fc1.init(c_in * side * side, kFcWidth, rng);
        fc2.init(kFcWidth, 2 * cfg.z_dim, rng);
    }

    void forward(const Mat<T>& x) {
        const Mat<T>* h = &x;
        for (int i = 0; i < 4; ++i) h = &relu[i].forward(conv[i].forward(*h));
        const Mat<T>& head = fc2.forward(relu_fc.forward(fc1.forward(flatten.forward(*h))));
        mean = head.topRows(cfg.z_dim);
        logvar = head.bottomRows(cfg.z_dim);
    }

    // Backpropagates gradients w.r.t. (mean, logvar); parameter gradients
    // accumulate, input gradients are not materialized.
    void backward(const Mat<T>& dmean, const Mat<T>& dlogvar) {
        dhead.resize(2 * cfg.z_dim, dmean.cols());
        dhead.topRows(cfg.z_dim) = dmean;
        dhead.bottomRows(cfg.z_dim) = dlogvar;
        const Mat<T>* g = &flatten.backward(fc1.backward(relu_fc.backward(fc2.backward(dhead))));
        for (int i = 3; i >= 1; --i) g = &conv[i].backward(relu[i].backward(*g));
        conv[0].backward(relu[0].backward(*g), /*want_dx=*/false);
    }

    std::vector<nn::Param<T>> params() {
        std::vector<nn::Param<T>> out;
        for (int i = 0; i < 4; ++i) conv[i].collect("enc.conv" + std::to_string(i + 1), out);
        fc1.collect("enc.fc1", out);
        fc2.collect("enc.fc2", out);
        return out;
    }
};

// Maps latent columns [z_dim x n] to image logits in feature-major layout;
// the Bernoulli means are sigmoid(logits).
template <typename T>
struct Decoder {
    NetworkConfig cfg;
    nn::Dense<T> fc1, fc2;
    nn::ReLU<T> relu_fc1, relu_fc2;
    nn::Unflatten<T> unflatten;
    nn::ConvTranspose2d<T> upconv[4];
    nn::ReLU<T> relu[3];
    Mat<T> logits;
    nn::Sigmoid<T> out_sigmoid;  // used only when means are requested

    void init(const NetworkConfig& cfg_, Rng& rng) {
        cfg = cfg_;
        cfg.validate();
        const int seed = cfg.seed_side();
        fc1.init(cfg.z_dim, kFcWidth, rng);
        fc2.init(kFcWidth, kConvChannels[3] * seed * seed, rng);
        unflatten.init(kConvChannels[3], seed * seed);
        int side = seed;
        const int chans[5] = {kConvChannels[3], kConvChannels[2], kConvChannels[1], kConvChannels[0], cfg.channels};
        for (int i = 0; i < 4; ++i) {
            upconv[i].init(chans[i], chans[i + 1], kKernel, kStride, kPad, side, side, rng);
            side *= 2;
        }
    }

    const Mat<T>& forward(const Mat<T>& z) {
        const Mat<T>* h = &unflatten.forward(relu_fc2.forward(fc2.forward(relu_fc1.forward(fc1.forward(z)))));
        for (int i = 0; i < 3; ++i) h = &relu[i].forward(upconv[i].forward(*h));
        logits = upconv[3].forward(*h);
        return logits;
    }

    const Mat<T>& means(const Mat<T>& z) { return out_sigmoid.forward(forward(z)); }

    // Backpropagates d(loss)/d(logits) down to d(loss)/dz. Parameter
    // gradients can be skipped when only dz is wanted (the adversarial
    // encoder stream discards them).
    const Mat<T>& backward(const Mat<T>& dlogits, bool want_wgrad = true) {
        const Mat<T>* g = &upconv[3].backward(dlogits, true, want_wgrad);
        for (int i = 2; i >= 0; --i) g = &upconv[i].backward(relu[i].backward(*g), true, want_wgrad);
        const Mat<T>& gh = fc2.backward(relu_fc2.backward(unflatten.backward(*g)), true, want_wgrad);
        return fc1.backward(relu_fc1.backward(gh), true, want_wgrad);
    }

    std::vector<nn::Param<T>> params() {
        std::vector<nn::Param<T>> out;
        fc1.collect("dec.fc1", out);
        fc2.collect("dec.fc2", out);
        for (int i = 0; i < 4; ++i) upconv[i].collect("dec.upconv" + std::to_string(i + 1), out);
        return out;
    }
};

// Binary discriminator over images: the encoder's convolutional ladder with
// an optional parameter-free instance norm after each convolution (used by
// the adversarial trainer for stability; the metric discriminator runs
// without it), followed by two dense layers down to a single logit.
template <typename T>
struct Discriminator {
    NetworkConfig cfg;
    bool instance_norm = true;
    nn::Conv2d<T> conv[4];
    nn::InstanceNorm2d<T> norm[4];
    nn::ReLU<T> relu[4];
    nn::Flatten<T> flatten;
    nn::Dense<T> fc1, fc2;
    nn::ReLU<T> relu_fc;

    void init(const NetworkConfig& cfg_, bool instance_norm_, Rng& rng) {
        cfg = cfg_;
        cfg.validate();
        instance_norm = instance_norm_;
        int side = cfg.image_size, c_in = cfg.channels;
        for (int i = 0; i < 4; ++i) {
            conv[i].init(c_in, kConvChannels[i], kKernel, kStride, kPad, side, side, rng);
            c_in = kConvChannels[i];
            side /= 2;
            norm[i].init(c_in, side * side);
        }
        flatten.init(c_in, side * side);
        fc1.init(c_in * side * side, kFcWidth, rng);
        fc2.init(kFcWidth, 1, rng);
    }

    // Returns logits [1 x n].
    const Mat<T>& forward(const Mat<T>& x) {
        const Mat<T>* h = &x;
        for (int i = 0; i < 4; ++i) {
            h = &conv[i].forward(*h);
            if (instance_norm) h = &norm[i].forward(*h);
            h = &relu[i].forward(*h);
        }
        return fc2.forward(relu_fc.forward(fc1.forward(flatten.forward(*h))));
    }

    const Mat<T>& logits() const { return fc2.y; }

    // Backpropagates d(loss)/d(logits); returns d(loss)/d(input) when
    // requested (the adversarial updates need it). Parameter gradients can
    // be skipped when the pass only routes gradient to the input.
    const Mat<T>& backward(const Mat<T>& dlogits, bool want_dx, bool want_wgrad = true) {
        const Mat<T>& gfc = fc1.backward(relu_fc.backward(fc2.backward(dlogits, true, want_wgrad)), true, want_wgrad);
        const Mat<T>* g = &flatten.backward(gfc);
        for (int i = 3; i >= 0; --i) {
            const Mat<T>* gr = &relu[i].backward(*g);
            if (instance_norm) gr = &norm[i].backward(*gr);
            g = &conv[i].backward(*gr, want_dx || i > 0, want_wgrad);
        }
        return conv[0].dx;
    }

    std::vector<nn::Param<T>> params() {
        std::vector<nn::Param<T>> out;
        for (int i = 0; i < 4; ++i) conv[i].collect("disc.conv" + std::to_string(i + 1), out);
        fc1.collect("disc.fc1", out);
        fc2.collect("disc.fc2", out);
        return out;
    }
};

}  // namespace davalab::vae
