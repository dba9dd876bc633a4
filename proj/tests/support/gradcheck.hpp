#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "davalab/core/rng.hpp"
#include "davalab/nn/layers.hpp"

namespace testsupport {

// Central finite difference of f around w with a step scaled to |w|.
inline double fd_grad(const std::function<double()>& f, double& w, double h = 0.0) {
    if (h == 0.0) h = 1e-5 * std::max(1.0, std::abs(w));
    const double w0 = w;
    w = w0 + h;
    const double fp = f();
    w = w0 - h;
    const double fm = f();
    w = w0;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

// Compares analytic gradients against central differences on `count`
// randomly chosen scalars of a parameter group. `loss` must recompute the
// loss from the current parameter values; `grads` must already hold the
// analytic gradient for those values. Returns the worst relative error.
inline double check_param_slice(std::vector<davalab::nn::Param<double>>& params,
                                const std::function<double()>& loss, int count,
                                davalab::Rng& rng) {
    Eigen::Index total = 0;
    for (const auto& p : params) total += p.size;
    double worst = 0.0;
    for (int k = 0; k < count; ++k) {
        Eigen::Index pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(total)));
        for (const auto& p : params) {
            if (pick < p.size) {
                const double analytic = p.grad[pick];
                const double numeric = fd_grad(loss, p.value[pick]);
                worst = std::max(worst, rel_err(analytic, numeric));
                break;
            }
            pick -= p.size;
        }
    }
    return worst;
}

}  // namespace testsupport
