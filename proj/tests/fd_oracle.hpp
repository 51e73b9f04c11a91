#pragma once

#include <Eigen/Dense>

#include "deqntk/empirical.hpp"

namespace deqntk::testing {

// Central differences of the equilibrium readout with respect to every raw weight entry.
inline DeqGradients fd_gradients(DeqWeights w, const Eigen::VectorXd& x, double h) {
    ForwardOptions fo;
    fo.tol = 1e-15;
    fo.max_iter = 100000;
    auto diff = [&](double& slot) {
        const double keep = slot;
        slot = keep + h;
        const double fp = deq_output(w, x, fo);
        slot = keep - h;
        const double fm = deq_output(w, x, fo);
        slot = keep;
        return (fp - fm) / (2 * h);
    };
    DeqGradients g;
    g.dW.resize(w.n, w.n);
    g.dU.resize(w.n, w.m);
    g.db.resize(w.n);
    g.dv.resize(w.n);
    for (int i = 0; i < w.n; ++i)
        for (int j = 0; j < w.n; ++j) g.dW(i, j) = diff(w.W(i, j));
    for (int i = 0; i < w.n; ++i)
        for (int j = 0; j < w.m; ++j) g.dU(i, j) = diff(w.U(i, j));
    for (int i = 0; i < w.n; ++i) g.db[i] = diff(w.b[i]);
    for (int i = 0; i < w.n; ++i) g.dv[i] = diff(w.v[i]);
    return g;
}

}  // namespace deqntk::testing
