#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/core/rng.hpp"
#include "davalab/core/tensor.hpp"

namespace davalab::synthdata {

// One ground-truth factor: a name, its cardinality, and the normalized
// value grid (strictly increasing, inside [0, 1]).
struct FactorSpec {
    std::string name;
    int cardinality = 0;
    std::vector<double> values;

    static FactorSpec grid(std::string name, int cardinality) {
        if (cardinality < 1) throw std::invalid_argument("FactorSpec: cardinality must be >= 1");
        FactorSpec f;
        f.name = std::move(name);
        f.cardinality = cardinality;
        f.values.resize(cardinality);
        for (int i = 0; i < cardinality; ++i)
            f.values[i] = cardinality == 1 ? 0.0 : static_cast<double>(i) / (cardinality - 1);
        return f;
    }
};

// Geometry of the procedural sprite family. All placement arithmetic is in
// integer pixels, so moving a sprite along the position grid translates its
// pixel pattern exactly (mass and shape preserved bit-for-bit).
struct SpriteConfig {
    int image_size = 64;
    int shapes = 2;   // square, ellipse (a disk)
    int scales = 3;
    int x_positions = 8;
    int y_positions = 8;
    int colors = 3;   // gray levels

    int base_extent() const { return image_size / 16; }
    int extent_step() const { return std::max(1, base_extent() / 2); }
    int half_extent(int scale_idx) const { return base_extent() + scale_idx * extent_step(); }
    int margin() const { return half_extent(scales - 1); }
    int position_stride(int cardinality) const {
        if (cardinality <= 1) return 0;
        return (image_size - 1 - 2 * margin()) / (cardinality - 1);
    }
    int center(int idx, int cardinality) const { return margin() + idx * position_stride(cardinality); }
    double intensity(int color_idx) const {
        return colors == 1 ? 1.0 : 0.4 + 0.6 * static_cast<double>(color_idx) / (colors - 1);
    }

    void validate() const {
        if (image_size < 16) throw std::invalid_argument("SpriteConfig: image_size must be >= 16");
        for (int card : {shapes, scales, x_positions, y_positions, colors})
            if (card < 1) throw std::invalid_argument("SpriteConfig: factor cardinalities must be >= 1");
        if (shapes > 2) throw std::invalid_argument("SpriteConfig: at most 2 shapes are defined");
        if (x_positions > 1 && position_stride(x_positions) < 1)
            throw std::invalid_argument("SpriteConfig: position grid does not fit the canvas");
        if (y_positions > 1 && position_stride(y_positions) < 1)
            throw std::invalid_argument("SpriteConfig: position grid does not fit the canvas");
        const int reach = center(x_positions - 1, x_positions) + margin();
        if (reach > image_size - 1)
            throw std::invalid_argument("SpriteConfig: sprite extent exceeds the canvas");
    }
};

// A finite labeled image distribution: every image is determined by a tuple
// of factor indices, either rendered procedurally or looked up from a
// materialized block. Images are single- or multi-channel float in [0, 1].
template <typename T>
class FactorDataset {
public:
    using Renderer = std::function<void(const int*, T*)>;

    FactorDataset() = default;
    FactorDataset(std::vector<FactorSpec> factors, int height, int width, int channels, Renderer renderer)
        : factors_(std::move(factors)), height_(height), width_(width), channels_(channels),
          renderer_(std::move(renderer)) {
        strides_.assign(factors_.size(), 1);
        size_ = 1;
        for (int k = static_cast<int>(factors_.size()) - 1; k >= 0; --k) {
            strides_[k] = size_;
            size_ *= factors_[k].cardinality;
        }
    }

    // The "toysprites" family: a gray sprite (square or disk) of one of a
    // few sizes and gray levels on an integer position grid over a black
    // canvas. Pixels are filled when their center lies inside the shape.
    static FactorDataset toysprites(const SpriteConfig& cfg) {
        cfg.validate();
        std::vector<FactorSpec> factors = {
            FactorSpec::grid("shape", cfg.shapes),   FactorSpec::grid("scale", cfg.scales),
            FactorSpec::grid("x", cfg.x_positions),  FactorSpec::grid("y", cfg.y_positions),
            FactorSpec::grid("color", cfg.colors),
        };
        const int side = cfg.image_size;
        auto render = [cfg, side](const int* f, T* out) {
            const int shape = f[0], scale = f[1], xi = f[2], yi = f[3], color = f[4];
            const int h = cfg.half_extent(scale);
            const int cx = cfg.center(xi, cfg.x_positions);
            const int cy = cfg.center(yi, cfg.y_positions);
            const T g = static_cast<T>(cfg.intensity(color));
            std::fill(out, out + static_cast<std::size_t>(side) * side, T(0));
            for (int y = cy - h; y <= cy + h; ++y) {
                const int dy = y - cy;
                for (int x = cx - h; x <= cx + h; ++x) {
                    const int dx = x - cx;
                    const bool inside = shape == 0 ? true : (dx * dx + dy * dy <= h * h);
                    if (inside) out[static_cast<std::size_t>(y) * side + x] = g;
                }
            }
        };
        return FactorDataset(std::move(factors), side, side, 1, render);
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    long size() const { return size_; }
    int num_factors() const { return static_cast<int>(factors_.size()); }
    const std::vector<FactorSpec>& factors() const { return factors_; }
    std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_ * channels_; }

    void index_to_factors(long idx, int* out) const {
        for (std::size_t k = 0; k < factors_.size(); ++k) {
            out[k] = static_cast<int>(idx / strides_[k]);
            idx %= strides_[k];
        }
    }

    long factors_to_index(const int* f) const {
        long idx = 0;
        for (std::size_t k = 0; k < factors_.size(); ++k) {
            if (f[k] < 0 || f[k] >= factors_[k].cardinality)
                throw std::invalid_argument("FactorDataset: factor index out of range");
            idx += strides_[k] * f[k];
        }
        return idx;
    }

    // Renders (or looks up) the image for one factor tuple.
    void render(const int* f, T* out) const {
        if (!block_.empty()) {
            const long idx = factors_to_index(f);
            std::copy_n(block_.data() + pixels() * idx, pixels(), out);
        } else {
            renderer_(f, out);
        }
    }

    ObservationBatch<T> batch_for_indices(const std::vector<long>& ids) const {
        ObservationBatch<T> b;
        b.n = static_cast<int>(ids.size());
        b.height = height_;
        b.width = width_;
        b.channels = channels_;
        b.num_factors = num_factors();
        b.images.resize(pixels() * ids.size());
        b.factors.resize(static_cast<std::size_t>(b.num_factors) * ids.size());
        std::vector<int> f(factors_.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= size_)
                throw std::invalid_argument("FactorDataset: sample index out of range");
            index_to_factors(ids[i], f.data());
            std::copy(f.begin(), f.end(), b.factors.begin() + i * factors_.size());
            render(f.data(), b.images.data() + pixels() * i);
        }
        return b;
    }

    // n samples uniform over all factor combinations.
    ObservationBatch<T> sample_batch(int n, Rng& rng) const {
        std::vector<long> ids(n);
        for (auto& id : ids) id = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(size_)));
        return batch_for_indices(ids);
    }

    // n samples with factor k held at one uniformly drawn value and all
    // other factors i.i.d. uniform.
    ObservationBatch<T> sample_fixed_factor(int n, int k, Rng& rng) const {
        if (k < 0 || k >= num_factors())
            throw std::invalid_argument("FactorDataset: fixed factor out of range");
        const int fixed = static_cast<int>(rng.uniform_int(factors_[k].cardinality));
        std::vector<long> ids(n);
        std::vector<int> f(factors_.size());
        for (auto& id : ids) {
            for (std::size_t j = 0; j < factors_.size(); ++j)
                f[j] = static_cast<int>(rng.uniform_int(factors_[j].cardinality));
            f[k] = fixed;
            id = factors_to_index(f.data());
        }
        return batch_for_indices(ids);
    }

    // The full enumeration in factor-index row-major order.
    ObservationBatch<T> enumerate() const {
        std::vector<long> ids(size_);
        std::iota(ids.begin(), ids.end(), 0L);
        return batch_for_indices(ids);
    }

    // --- cache -----------------------------------------------------------
    // On disk a dataset is a raw little-endian float32 image block (full
    // enumeration, factor-index order) plus a plain-text key=value manifest
    // at <path>.manifest.

    void save(const std::string& path) const {
        std::ofstream bin(path, std::ios::binary);
        if (!bin) throw std::runtime_error("FactorDataset: cannot write " + path);
        std::vector<int> f(factors_.size());
        std::vector<T> img(pixels());
        std::vector<float> row(pixels());
        for (long i = 0; i < size_; ++i) {
            index_to_factors(i, f.data());
            render(f.data(), img.data());
            for (std::size_t p = 0; p < img.size(); ++p) row[p] = static_cast<float>(img[p]);
            bin.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(row.size() * sizeof(float)));
        }
        std::ofstream man(manifest_path(path));
        if (!man) throw std::runtime_error("FactorDataset: cannot write " + manifest_path(path));
        man << "version=1\n";
        man << "height=" << height_ << "\n";
        man << "width=" << width_ << "\n";
        man << "channels=" << channels_ << "\n";
        man << "factors=";
        for (std::size_t k = 0; k < factors_.size(); ++k)
            man << (k ? ";" : "") << factors_[k].name << ":" << factors_[k].cardinality;
        man << "\n";
    }

    static FactorDataset load(const std::string& path) {
        std::ifstream man(manifest_path(path));
        if (!man) throw std::runtime_error("FactorDataset: missing manifest " + manifest_path(path));
        int height = 0, width = 0, channels = 0, version = 0;
        std::vector<FactorSpec> factors;
        std::string line;
        while (std::getline(man, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "version") version = std::stoi(val);
            else if (key == "height") height = std::stoi(val);
            else if (key == "width") width = std::stoi(val);
            else if (key == "channels") channels = std::stoi(val);
            else if (key == "factors") {
                std::stringstream ss(val);
                std::string item;
                while (std::getline(ss, item, ';')) {
                    const auto colon = item.find(':');
                    if (colon == std::string::npos)
                        throw std::runtime_error("FactorDataset: malformed factors entry '" + item + "'");
                    factors.push_back(FactorSpec::grid(item.substr(0, colon), std::stoi(item.substr(colon + 1))));
                }
            } else {
                throw std::runtime_error("FactorDataset: unknown manifest key '" + key + "'");
            }
        }
        if (version != 1) throw std::runtime_error("FactorDataset: unsupported cache version");
        if (height <= 0 || width <= 0 || channels <= 0 || factors.empty())
            throw std::runtime_error("FactorDataset: incomplete manifest");

        FactorDataset d(std::move(factors), height, width, channels, Renderer{});
        std::ifstream bin(path, std::ios::binary);
        if (!bin) throw std::runtime_error("FactorDataset: missing image block " + path);
        bin.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(bin.tellg());
        const std::size_t expect = d.pixels() * static_cast<std::size_t>(d.size_) * sizeof(float);
        if (bytes != expect)
            throw std::runtime_error("FactorDataset: image block size mismatch for " + path);
        bin.seekg(0);
        std::vector<float> raw(d.pixels() * d.size_);
        bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expect));
        d.block_.assign(raw.begin(), raw.end());
        return d;
    }

private:
    static std::string manifest_path(const std::string& path) { return path + ".manifest"; }

    std::vector<FactorSpec> factors_;
    int height_ = 0, width_ = 0, channels_ = 0;
    long size_ = 0;
    std::vector<long> strides_;
    Renderer renderer_;
    std::vector<T> block_;
};

}  // namespace davalab::synthdata
