#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace davalab {

// Dense activations and weights are plain Eigen matrices. Network
// activations use a feature-major layout: a batch of C-channel feature maps
// of spatial size H*W is stored as a [C x (N*H*W)] matrix whose column index
// is n*H*W + h*W + w. Convolutions then reduce to a single GEMM per batch
// with no per-sample repacking.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Matf = Mat<float>;
using Matd = Mat<double>;

// A batch of images plus optional per-sample ground-truth factor indices.
// Images are stored sample-major (n, h, w, c), values in [0, 1].
template <typename T>
struct ObservationBatch {
    int n = 0, height = 0, width = 0, channels = 0;
    std::vector<T> images;        // n * height * width * channels
    std::vector<int> factors;     // n * num_factors, empty if unknown
    int num_factors = 0;

    std::size_t image_size() const {
        return static_cast<std::size_t>(height) * width * channels;
    }
    const T* image(int i) const { return images.data() + image_size() * i; }
    T* image(int i) { return images.data() + image_size() * i; }
    const int* factor_row(int i) const { return factors.data() + static_cast<std::size_t>(num_factors) * i; }
};

// (n, h, w, c) batch -> feature-major [c x (n*h*w)] activation matrix.
template <typename T>
void to_feature_major(const ObservationBatch<T>& b, Mat<T>& out) {
    const int hw = b.height * b.width;
    out.resize(b.channels, static_cast<Eigen::Index>(b.n) * hw);
    for (int i = 0; i < b.n; ++i) {
        const T* src = b.image(i);
        for (int s = 0; s < hw; ++s)
            for (int c = 0; c < b.channels; ++c)
                out(c, static_cast<Eigen::Index>(i) * hw + s) = src[s * b.channels + c];
    }
}

// Feature-major activation matrix -> (n, h, w, c) batch.
template <typename T>
void from_feature_major(const Mat<T>& a, int n, int height, int width, ObservationBatch<T>& out) {
    const int hw = height * width;
    const int channels = static_cast<int>(a.rows());
    if (a.cols() != static_cast<Eigen::Index>(n) * hw)
        throw std::invalid_argument("from_feature_major: activation shape mismatch");
    out.n = n;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.images.resize(static_cast<std::size_t>(n) * hw * channels);
    for (int i = 0; i < n; ++i) {
        T* dst = out.image(i);
        for (int s = 0; s < hw; ++s)
            for (int c = 0; c < channels; ++c)
                dst[s * channels + c] = a(c, static_cast<Eigen::Index>(i) * hw + s);
    }
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace davalab
