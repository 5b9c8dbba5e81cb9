#pragma once

#include <cmath>
#include <functional>

#include "bsbm/net.hpp"

namespace bsbm::test {

// Relative-error gradient check with an absolute floor for near-zero entries.
inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_floor = 1e-8) {
    const double diff = std::fabs(analytic - numeric);
    if (diff <= abs_floor) return true;
    return diff <= rel_tol * std::max(std::fabs(analytic), std::fabs(numeric));
}

// Central finite differences of `f` with respect to every parameter of `net`,
// compared against `grads`. Returns the worst relative error (using the
// abs_floor convention above: entries passing on the floor count as 0).
inline double max_grad_rel_err(MlpNet& net, const NetGrads& grads,
                               const std::function<double()>& f, double step = 1e-6) {
    double worst = 0.0;
    auto params = net.params();
    auto gparams = grads.params();
    for (int pi = 0; pi < 6; ++pi) {
        Matrix& p = *params[pi];
        const Matrix& g = *gparams[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + step;
            const double fp = f();
            p.data()[i] = saved - step;
            const double fm = f();
            p.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = g.data()[i];
            const double diff = std::fabs(analytic - numeric);
            if (diff <= 1e-8) continue;
            worst = std::max(worst, diff / std::max(std::fabs(analytic), std::fabs(numeric)));
        }
    }
    return worst;
}

}  // namespace bsbm::test
