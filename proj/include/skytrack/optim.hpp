#pragma once

#include <vector>

#include <Eigen/Cholesky>

#include "skytrack/common.hpp"

namespace skytrack {

struct LmOptions {
    int max_iterations = 50;
    double step_tolerance = 1e-10;  // accepted-step norm below this stops
    double initial_mu = 1e-4;
    double mu_decrease = 0.3;
    double mu_increase = 4.0;
    int max_inner_retries = 16;
};

struct LmResult {
    VecX x;
    bool converged = false;
    int iterations = 0;
    double final_cost = 0.0;
    std::vector<double> cost_history;  // objective after each accepted step
};

// Levenberg-Marquardt with multiplicative damping on diag(J^T J).
//
// Problem interface:
//   void evaluate(const VecX& x, VecX& residuals, MatX* jacobian) const;
// The Jacobian is d(residuals)/dx at x. Steps that would increase the
// objective are rejected and retried with larger damping, so the recorded
// cost history is non-increasing.
template <typename Problem>
LmResult lm_solve(const Problem& problem, VecX x0, const LmOptions& options = {}) {
    LmResult result;
    result.x = std::move(x0);

    VecX res;
    MatX jac;
    problem.evaluate(result.x, res, &jac);
    double cost = res.squaredNorm();
    result.cost_history.push_back(cost);

    double mu = options.initial_mu;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const MatX jtj = jac.transpose() * jac;
        const VecX gradient = jac.transpose() * res;
        bool accepted = false;
        double step_norm = 0.0;
        for (int retry = 0; retry < options.max_inner_retries && !accepted; ++retry) {
            MatX a = jtj;
            a.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
            const VecX step = a.ldlt().solve(-gradient);
            const VecX candidate = result.x + step;
            VecX cand_res;
            problem.evaluate(candidate, cand_res, nullptr);
            const double cand_cost = cand_res.squaredNorm();
            if (cand_cost <= cost) {
                result.x = candidate;
                cost = cand_cost;
                result.cost_history.push_back(cost);
                step_norm = step.norm();
                mu = std::max(mu * options.mu_decrease, 1e-14);
                accepted = true;
            } else {
                mu *= options.mu_increase;
            }
        }
        result.iterations = iter + 1;
        if (!accepted) {
            // Damping exhausted: no descent direction left at this precision.
            result.converged = gradient.norm() <= 1e-8 * std::max(1.0, cost);
            break;
        }
        if (step_norm < options.step_tolerance) {
            result.converged = true;
            break;
        }
        problem.evaluate(result.x, res, &jac);
    }
    result.final_cost = cost;
    return result;
}

}  // namespace skytrack
