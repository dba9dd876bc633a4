#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "davalab/core/tensor.hpp"
#include "davalab/synthdata/dataset.hpp"
#include "davalab/vae/model.hpp"

namespace testsupport {

using davalab::Mat;
using davalab::ObservationBatch;

// Shared plumbing for models whose latent code is built directly from
// ground-truth factor indices and whose decoder runs the dataset renderer.
// Encoding reads the factor labels carried by dataset batches; posterior
// log-variance is a large negative constant, so sampled codes equal the
// means for all practical purposes.
template <typename T>
class FactorOracleBase : public davalab::vae::LatentModel<T> {
public:
    explicit FactorOracleBase(const davalab::synthdata::FactorDataset<T>& data) : data_(&data) {}

    int image_size() const override { return data_->height(); }
    int channels() const override { return data_->channels(); }

    // Normalized grid value of factor k at index idx.
    T value_of(int k, int idx) const {
        return static_cast<T>(data_->factors()[static_cast<std::size_t>(k)].values[static_cast<std::size_t>(idx)]);
    }

protected:
    static constexpr T kLogVar = T(-80);

    const davalab::synthdata::FactorDataset<T>& data() const { return *data_; }

    // Inverse of the normalized grid: clamped floor binning. Grid value
    // i/(c-1) falls into bin i exactly, and the bin edges partition [0, 1]
    // evenly, so uniform codes hit all bins with equal probability.
    int bin_of(int k, T v) const {
        const int card = data_->factors()[static_cast<std::size_t>(k)].cardinality;
        const int idx = static_cast<int>(std::floor(static_cast<double>(v) * card));
        return std::clamp(idx, 0, card - 1);
    }

    void prepare_output(int n, ObservationBatch<T>& out) const {
        out.n = n;
        out.height = data_->height();
        out.width = data_->width();
        out.channels = data_->channels();
        out.num_factors = 0;
        out.factors.clear();
        out.images.resize(data_->pixels() * static_cast<std::size_t>(n));
    }

private:
    const davalab::synthdata::FactorDataset<T>* data_;
};

// Perfectly disentangled reference: one latent dimension per ground-truth
// factor, holding its normalized value; the decoder renders the binned
// factor tuple. decode(encode(x)) reproduces x exactly, and any factorial
// recombination of codes decodes to an on-manifold dataset image.
template <typename T>
class DisentangledOracle : public FactorOracleBase<T> {
public:
    using FactorOracleBase<T>::FactorOracleBase;

    int z_dim() const override { return this->data().num_factors(); }

    void encode(const ObservationBatch<T>& x, Mat<T>& mean, Mat<T>& logvar) override {
        davalab::require(!x.factors.empty(), "DisentangledOracle: batch carries no factor labels");
        const int k = this->data().num_factors();
        mean.resize(k, x.n);
        logvar.setConstant(k, x.n, this->kLogVar);
        for (int i = 0; i < x.n; ++i) {
            const int* f = x.factor_row(i);
            for (int j = 0; j < k; ++j) mean(j, i) = this->value_of(j, f[j]);
        }
    }

    void decode(const Mat<T>& z, ObservationBatch<T>& out) override {
        const int n = static_cast<int>(z.cols());
        this->prepare_output(n, out);
        std::vector<int> f(static_cast<std::size_t>(this->data().num_factors()));
        for (int i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < f.size(); ++j) f[j] = this->bin_of(static_cast<int>(j), z(static_cast<Eigen::Index>(j), i));
            this->data().render(f.data(), out.image(i));
        }
    }
};

// Deliberately entangled reference: two latent dimensions are equal copies
// of one factor (the x position by default). Reconstructions keep the
// copies consistent, but factorial recombination usually breaks the tie,
// and contradictory codes decode to an off-manifold blend of the two
// implied sprites.
template <typename T>
class EntangledOracle : public FactorOracleBase<T> {
public:
    explicit EntangledOracle(const davalab::synthdata::FactorDataset<T>& data, int duplicated_factor = 2)
        : FactorOracleBase<T>(data), dup_(duplicated_factor) {
        davalab::require(dup_ >= 0 && dup_ < data.num_factors(), "EntangledOracle: duplicated factor out of range");
    }

    int z_dim() const override { return this->data().num_factors() + 1; }

    void encode(const ObservationBatch<T>& x, Mat<T>& mean, Mat<T>& logvar) override {
        davalab::require(!x.factors.empty(), "EntangledOracle: batch carries no factor labels");
        const int k = this->data().num_factors();
        mean.resize(k + 1, x.n);
        logvar.setConstant(k + 1, x.n, this->kLogVar);
        for (int i = 0; i < x.n; ++i) {
            const int* f = x.factor_row(i);
            const T dup_value = this->value_of(dup_, f[dup_]);
            mean(0, i) = dup_value;
            mean(1, i) = dup_value;
            int row = 2;
            for (int j = 0; j < k; ++j)
                if (j != dup_) mean(row++, i) = this->value_of(j, f[j]);
        }
    }

    void decode(const Mat<T>& z, ObservationBatch<T>& out) override {
        const int n = static_cast<int>(z.cols());
        this->prepare_output(n, out);
        const int k = this->data().num_factors();
        std::vector<int> f(static_cast<std::size_t>(k));
        std::vector<T> ghost(this->data().pixels());
        for (int i = 0; i < n; ++i) {
            int row = 2;
            for (int j = 0; j < k; ++j)
                if (j != dup_) f[static_cast<std::size_t>(j)] = this->bin_of(j, z(row++, i));
            const int a = this->bin_of(dup_, z(0, i));
            const int b = this->bin_of(dup_, z(1, i));
            f[static_cast<std::size_t>(dup_)] = a;
            this->data().render(f.data(), out.image(i));
            if (b != a) {
                f[static_cast<std::size_t>(dup_)] = b;
                this->data().render(f.data(), ghost.data());
                T* img = out.image(i);
                for (std::size_t p = 0; p < ghost.size(); ++p)
                    img[p] = static_cast<T>(0.5) * (img[p] + ghost[p]);
            }
        }
    }

private:
    int dup_;
};

// Degenerate reference: the decoder emits one fixed image no matter the
// code. Its PIPE sets are identical by construction, so only the collapse
// probe can tell it apart from a genuinely indistinguishable model.
template <typename T>
class CollapsedOracle : public FactorOracleBase<T> {
public:
    explicit CollapsedOracle(const davalab::synthdata::FactorDataset<T>& data) : FactorOracleBase<T>(data) {
        fixed_.resize(data.pixels());
        std::vector<int> f(static_cast<std::size_t>(data.num_factors()), 0);
        data.render(f.data(), fixed_.data());
    }

    int z_dim() const override { return this->data().num_factors(); }

    void encode(const ObservationBatch<T>& x, Mat<T>& mean, Mat<T>& logvar) override {
        mean.setZero(z_dim(), x.n);
        logvar.setConstant(z_dim(), x.n, this->kLogVar);
    }

    void decode(const Mat<T>& z, ObservationBatch<T>& out) override {
        const int n = static_cast<int>(z.cols());
        this->prepare_output(n, out);
        for (int i = 0; i < n; ++i) std::copy(fixed_.begin(), fixed_.end(), out.image(i));
    }

private:
    std::vector<T> fixed_;
};

}  // namespace testsupport
