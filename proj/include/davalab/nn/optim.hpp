#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "davalab/nn/layers.hpp"

namespace davalab::nn {

template <typename T>
using ParamMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstParamMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
double grad_norm(const std::vector<Param<T>>& params) {
    double sq = 0.0;
    for (const auto& p : params)
        sq += ConstParamMap<T>(p.grad, p.size).template cast<double>().square().sum();
    return std::sqrt(sq);
}

// Global-norm gradient clipping over a parameter group. Returns the norm
// after clipping.
template <typename T>
double clip_grad_norm(std::vector<Param<T>>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& p : params) ParamMap<T>(p.grad, p.size) *= scale;
        return max_norm;
    }
    return norm;
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. An instance owns only its moment buffers, not
// the parameter group: the group is passed to every step() call and must
// keep the same flat layout across calls. This keeps optimizer state
// value-semantic, so training states can be cloned and checkpointed freely.
template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(std::vector<Param<T>>& params) {
        Eigen::Index total = 0;
        for (const auto& p : params) total += p.size;
        if (m_.empty()) {
            m_.assign(static_cast<std::size_t>(total), T(0));
            v_.assign(static_cast<std::size_t>(total), T(0));
        } else if (m_.size() != static_cast<std::size_t>(total)) {
            throw std::invalid_argument("Adam::step: parameter group size changed");
        }
        ++t_;
        const T b1 = static_cast<T>(cfg_.beta1), c1 = static_cast<T>(1.0 - cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2), c2 = static_cast<T>(1.0 - cfg_.beta2);
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t_));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t_));
        const T lr = static_cast<T>(cfg_.lr), eps = static_cast<T>(cfg_.eps);
        std::size_t off = 0;
        for (auto& p : params) {
            ConstParamMap<T> g(p.grad, p.size);
            ParamMap<T> m(m_.data() + off, p.size);
            ParamMap<T> v(v_.data() + off, p.size);
            ParamMap<T> value(p.value, p.size);
            m = b1 * m + c1 * g;
            v = b2 * v + c2 * g.square();
            value -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            off += static_cast<std::size_t>(p.size);
        }
    }

    const AdamConfig& config() const { return cfg_; }

    // State access for checkpointing.
    std::vector<T>& m() { return m_; }
    std::vector<T>& v() { return v_; }
    const std::vector<T>& m() const { return m_; }
    const std::vector<T>& v() const { return v_; }
    long& t() { return t_; }
    long t() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<T> m_, v_;
    long t_ = 0;
};

}  // namespace davalab::nn
