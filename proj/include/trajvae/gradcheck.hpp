#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "trajvae/tape.hpp"

namespace trajvae {

// Central-difference gradient verification.
//
// `f` evaluates the scalar objective at the current parameter values (the
// parameter tensors are perturbed in place and restored). `analytic` holds the
// gradient computed by backward() at the unperturbed point, one tensor per
// parameter. Returns max over all scalar parameters of
//   |g_ad - g_fd| / max(1, |g_fd|).
inline double finite_difference_check(const std::function<double()>& f,
                                      const std::vector<std::pair<Tensor*, const Tensor*>>& params,
                                      double h) {
    if (h < 1e-6 || h > 1e-3) throw ContractError("finite_difference_check: h out of [1e-6, 1e-3]");
    double worst = 0.0;
    for (const auto& [p, g_ad] : params) {
        if (!p->same_shape(*g_ad)) throw DimensionError("finite_difference_check: grad shape mismatch");
        for (int i = 0; i < p->size(); ++i) {
            double saved = (*p)[i];
            (*p)[i] = saved + h;
            double fp = f();
            (*p)[i] = saved - h;
            double fm = f();
            (*p)[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw ContractError("finite_difference_check: non-finite objective");
            double g_fd = (fp - fm) / (2.0 * h);
            double err = std::fabs((*g_ad)[i] - g_fd) / std::max(1.0, std::fabs(g_fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace trajvae
