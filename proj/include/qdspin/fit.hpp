// Copyright 2026 The qdspin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

#include "errors.hpp"

namespace qdspin {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct LmOptions {
    int max_iterations = 500;
    double tolerance = 1e-12;  // relative cost change
    double lambda0 = 1e-3;
};

struct LmResult {
    Eigen::VectorXd params;
    Eigen::VectorXd errors;       // sqrt(diag(cov)), scaled by reduced chi^2
    Eigen::MatrixXd covariance;
    double cost = 0.0;            // sum of squared residuals
    int dof = 0;
    int iterations = 0;
    bool converged = false;
    double jacobian_check = 0.0;  // relative FD-Jacobian disagreement at the optimum
};

// Central-difference Jacobian; `order` 2 or 4.
inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& f, const Eigen::VectorXd& p, int order = 2) {
    const Eigen::VectorXd r0 = f(p);
    Eigen::MatrixXd j(r0.size(), p.size());
    for (int k = 0; k < p.size(); ++k) {
        const double h = (order == 2 ? 1e-6 : 1e-4) * std::max(1.0, std::abs(p(k)));
        auto at = [&](double d) {
            Eigen::VectorXd q = p;
            q(k) += d;
            return f(q);
        };
        if (order == 2) {
            j.col(k) = (at(h) - at(-h)) / (2.0 * h);
        } else {
            j.col(k) = (-at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h)) / (12.0 * h);
        }
    }
    return j;
}

// Relative disagreement between the 2nd-order Jacobian used by the solver and
// an independent 4th-order stencil.
inline double jacobian_check(const ResidualFn& f, const Eigen::VectorXd& p) {
    const Eigen::MatrixXd a = numeric_jacobian(f, p, 2);
    const Eigen::MatrixXd b = numeric_jacobian(f, p, 4);
    const double nb = b.norm();
    return nb > 0.0 ? (a - b).norm() / nb : (a - b).norm();
}

inline LmResult levenberg_marquardt(const ResidualFn& f, Eigen::VectorXd p, const LmOptions& opt = {}) {
    LmResult res;
    Eigen::VectorXd r = f(p);
    double cost = r.squaredNorm();
    if (!std::isfinite(cost)) throw AnalysisError("FitDiverged", "non-finite residuals at the initial guess");
    double lambda = opt.lambda0;
    int it = 0;
    bool converged = false;
    for (; it < opt.max_iterations; ++it) {
        const Eigen::MatrixXd j = numeric_jacobian(f, p);
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::MatrixXd a = jtj;
            for (int k = 0; k < a.rows(); ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            const Eigen::VectorXd q = p + step;
            const Eigen::VectorXd rq = f(q);
            const double cq = rq.squaredNorm();
            if (std::isfinite(cq) && cq <= cost) {
                const double rel = (cost - cq) / std::max(cost, 1e-300);
                const double step_rel = step.norm() / (p.norm() + 1e-12);
                p = q;
                r = rq;
                cost = cq;
                lambda = std::max(lambda / 3.0, 1e-15);
                improved = true;
                if (rel < opt.tolerance || step_rel < 1e-12) converged = true;
                break;
            }
            lambda *= 4.0;
        }
        if (!improved) {
            converged = true;  // no descent direction left: at a minimum to working precision
            break;
        }
        if (converged) break;
    }
    if (!p.allFinite()) throw AnalysisError("FitDiverged", "fit produced non-finite parameters");
    if (!converged) throw AnalysisError("FitDiverged", "fit did not converge");
    res.params = p;
    res.cost = cost;
    res.iterations = it;
    res.converged = converged;
    res.dof = static_cast<int>(r.size() - p.size());
    const Eigen::MatrixXd j = numeric_jacobian(f, p);
    const double red = res.dof > 0 ? cost / res.dof : 1.0;
    res.covariance = (j.transpose() * j).completeOrthogonalDecomposition().pseudoInverse() * red;
    res.errors = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    res.jacobian_check = jacobian_check(f, p);
    return res;
}

}  // namespace qdspin
