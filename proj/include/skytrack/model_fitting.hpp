#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "skytrack/camera.hpp"
#include "skytrack/common.hpp"
#include "skytrack/keypoints.hpp"
#include "skytrack/optim.hpp"
#include "skytrack/shape_prior.hpp"

namespace skytrack {

struct FitConfig {
    double lambda = 10.0;  // shape regularizer weight
    int max_iterations = 50;
    double step_tolerance = 1e-10;
    int ransac_iterations = 64;
    double ransac_inlier_angle = deg2rad(10.0);
    bool robust_loss = false;     // Huber weights on keypoint residuals
    double huber_threshold_px = 5.0;
    int min_visible_keypoints = 4;

    void validate() const {
        if (lambda < 0.0) throw PreconditionError("fit config: lambda must be >= 0");
        if (max_iterations < 1 || ransac_iterations < 1)
            throw PreconditionError("fit config: iteration counts must be positive");
        if (!(step_tolerance > 0.0) || !(ransac_inlier_angle > 0.0))
            throw PreconditionError("fit config: tolerances must be positive");
    }
};

// Fitted ground-plane pose and shape parameters for one detection.
struct VehicleFit {
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;  // heading, normalized to [-pi, pi)
    VecX b;
    double residual_px = 0.0;  // mean reprojection error over visible keypoints
    bool converged = false;
    int iterations = 0;
    std::vector<double> cost_history;

    Vec2 position() const { return Vec2(x, y); }
};

// Heading initialization: forward-direction keypoint pairs are lifted to the
// ground plane and the consensus direction is found by exhausting each lifted
// vector as a hypothesis (deterministic RANSAC; the candidate set is tiny).
inline double initial_heading(const KeypointDetection& detection, const CameraView& camera,
                              const FitConfig& cfg = {}) {
    std::vector<Vec2> ground_vectors;
    for (const auto& [front, rear] : KeypointSchema::forward_pairs()) {
        const auto& f = detection.keypoints[static_cast<std::size_t>(front)];
        const auto& r = detection.keypoints[static_cast<std::size_t>(rear)];
        if (!f.visible || !r.visible) continue;
        try {
            const Vec2 gf = back_project_to_ground(camera.pose, camera.intrinsics, f.pixel);
            const Vec2 gr = back_project_to_ground(camera.pose, camera.intrinsics, r.pixel);
            const Vec2 v = gf - gr;
            if (v.norm() > 1e-9) ground_vectors.push_back(v.normalized());
        } catch (const PreconditionError&) {
            // endpoint ray missed the ground; skip the pair
        }
    }
    if (ground_vectors.empty())
        throw PreconditionError("initial_heading: no visible forward-direction keypoint pairs");
    if (ground_vectors.size() == 1)
        return std::atan2(ground_vectors[0].y(), ground_vectors[0].x());

    const int hypotheses =
        std::min<int>(static_cast<int>(ground_vectors.size()), cfg.ransac_iterations);
    std::size_t best_count = 0;
    std::vector<int> best_inliers;
    for (int h = 0; h < hypotheses; ++h) {
        const double angle_h =
            std::atan2(ground_vectors[static_cast<std::size_t>(h)].y(),
                       ground_vectors[static_cast<std::size_t>(h)].x());
        std::vector<int> inliers;
        for (std::size_t i = 0; i < ground_vectors.size(); ++i) {
            const double angle_i = std::atan2(ground_vectors[i].y(), ground_vectors[i].x());
            if (std::abs(angle_diff(angle_i, angle_h)) <= cfg.ransac_inlier_angle)
                inliers.push_back(static_cast<int>(i));
        }
        if (inliers.size() > best_count) {
            best_count = inliers.size();
            best_inliers = std::move(inliers);
        }
    }
    Vec2 mean = Vec2::Zero();
    for (int i : best_inliers) mean += ground_vectors[static_cast<std::size_t>(i)];
    return std::atan2(mean.y(), mean.x());
}

namespace detail {

// Nonlinear least-squares problem over (x, y, psi, b): keypoint reprojection
// residuals for visible slots plus sqrt(lambda) * (b - b_t) regularizer rows.
struct VehicleFitProblem {
    const KeypointDetection& detection;
    const ShapePrior& prior;
    const CameraView& camera;
    const VecX& b_template;
    double lambda;
    bool robust = false;
    double huber_px = 5.0;
    std::vector<int> visible_slots;

    VehicleFitProblem(const KeypointDetection& d, const ShapePrior& p, const CameraView& cam,
                      const VecX& bt, double lam, bool robust_loss, double huber)
        : detection(d), prior(p), camera(cam), b_template(bt), lambda(lam), robust(robust_loss),
          huber_px(huber) {
        for (int s = 0; s < kKeypointCount; ++s)
            if (d.keypoints[static_cast<std::size_t>(s)].visible) visible_slots.push_back(s);
    }

    int residual_count() const {
        return 2 * static_cast<int>(visible_slots.size()) +
               (lambda > 0.0 ? prior.k() : 0);
    }

    void evaluate(const VecX& state, VecX& residuals, MatX* jacobian) const {
        const int k = prior.k();
        const double psi = state(2);
        const VecX b = state.tail(k);
        const Mat3 rot = rot_z(psi);
        const Mat3 drot = rot_z_derivative(psi);
        const Vec3 t(state(0), state(1), 0.0);

        const int m = residual_count();
        residuals.resize(m);
        if (jacobian) jacobian->setZero(m, 3 + k);

        const auto& kmat = camera.intrinsics;
        const Mat3& rc = camera.pose.rotation;
        for (std::size_t i = 0; i < visible_slots.size(); ++i) {
            const int slot = visible_slots[i];
            const auto wj = prior.basis.middleRows(3 * slot, 3);  // 3 x k
            const Vec3 body = wj * b + prior.mean_shape.segment<3>(3 * slot);
            const Vec3 world = rot * body + t;
            const Vec3 q = rc * world + camera.pose.translation;
            const int row = 2 * static_cast<int>(i);
            if (q.z() <= 1e-6) {
                // behind-camera candidate; poison the step so LM rejects it
                residuals.segment<2>(row).setConstant(1e9);
                continue;
            }
            const Vec2 projected(kmat.fx * q.x() / q.z() + kmat.principal_point.x(),
                                 kmat.fy * q.y() / q.z() + kmat.principal_point.y());
            const Vec2 observed = detection.keypoints[static_cast<std::size_t>(slot)].pixel;
            Vec2 r = observed - projected;
            double weight = 1.0;
            if (robust) {
                const double norm = r.norm();
                if (norm > huber_px) weight = std::sqrt(huber_px / norm);
            }
            residuals.segment<2>(row) = weight * r;
            if (jacobian) {
                Eigen::Matrix<double, 2, 3> dproj;
                dproj << kmat.fx / q.z(), 0, -kmat.fx * q.x() / (q.z() * q.z()),
                         0, kmat.fy / q.z(), -kmat.fy * q.y() / (q.z() * q.z());
                const Eigen::Matrix<double, 2, 3> dworld = dproj * rc;
                // residual = observed - projected
                jacobian->block<2, 1>(row, 0) = -weight * dworld.col(0);
                jacobian->block<2, 1>(row, 1) = -weight * dworld.col(1);
                jacobian->block<2, 1>(row, 2) = -weight * (dworld * (drot * body));
                jacobian->block(row, 3, 2, k) = -weight * (dworld * (rot * wj));
            }
        }
        if (lambda > 0.0) {
            const double sqrt_lambda = std::sqrt(lambda);
            const int row0 = 2 * static_cast<int>(visible_slots.size());
            residuals.segment(row0, k) = sqrt_lambda * (b - b_template);
            if (jacobian)
                jacobian->block(row0, 3, k, k) = sqrt_lambda * MatX::Identity(k, k);
        }
    }
};

}  // namespace detail

// Residual vector and analytic Jacobian of the fitting objective at `state`
// (layout: x, y, psi, then the k shape parameters).
inline void residuals_and_jacobian(const VecX& state, const KeypointDetection& detection,
                                   const ShapePrior& prior, const CameraView& camera,
                                   const VecX& b_template, double lambda, VecX& residuals,
                                   MatX* jacobian) {
    if (state.size() != 3 + prior.k())
        throw PreconditionError("residuals_and_jacobian: state dimension mismatch");
    detail::VehicleFitProblem problem(detection, prior, camera, b_template, lambda, false, 0.0);
    if (static_cast<int>(problem.visible_slots.size()) < 1)
        throw PreconditionError("residuals_and_jacobian: no visible keypoints");
    problem.evaluate(state, residuals, jacobian);
}

// Joint pose-and-shape fit for one detection by Levenberg-Marquardt.
//
// Initialization: position from the back-projected bounding-box center, shape
// from the categorical template, heading from initial_heading when forward
// pairs are visible. Without forward pairs, four headings (psi_hint plus
// quarter turns) are tried and the lowest-residual fit kept.
inline VehicleFit fit_vehicle(const KeypointDetection& detection, const ShapePrior& prior,
                              const CameraView& camera, const VecX& b_template,
                              const FitConfig& cfg = {},
                              std::optional<double> psi_hint = std::nullopt,
                              std::optional<Vec2> position_hint = std::nullopt) {
    cfg.validate();
    if (b_template.size() != prior.k())
        throw PreconditionError("fit_vehicle: template dimension mismatch");
    if (detection.visible_count() < cfg.min_visible_keypoints)
        throw PreconditionError("fit_vehicle: fewer visible keypoints than required (" +
                                std::to_string(detection.visible_count()) + " < " +
                                std::to_string(cfg.min_visible_keypoints) + ")");

    Vec2 position;
    if (position_hint) {
        position = *position_hint;
    } else {
        position = back_project_to_ground(camera.pose, camera.intrinsics, detection.box_center());
    }

    std::vector<double> headings;
    try {
        headings.push_back(initial_heading(detection, camera, cfg));
    } catch (const PreconditionError&) {
        const double base = psi_hint.value_or(0.0);
        for (int q = 0; q < 4; ++q) headings.push_back(base + q * kPi / 2.0);
    }

    detail::VehicleFitProblem problem(detection, prior, camera, b_template, cfg.lambda,
                                      cfg.robust_loss, cfg.huber_threshold_px);
    LmOptions options;
    options.max_iterations = cfg.max_iterations;
    options.step_tolerance = cfg.step_tolerance;

    const int k = prior.k();
    std::optional<LmResult> best;
    for (double psi0 : headings) {
        VecX x0(3 + k);
        x0(0) = position.x();
        x0(1) = position.y();
        x0(2) = psi0;
        x0.tail(k) = b_template;
        LmResult r = lm_solve(problem, std::move(x0), options);
        if (!best || r.final_cost < best->final_cost) best = std::move(r);
    }

    VehicleFit fit;
    fit.x = best->x(0);
    fit.y = best->x(1);
    fit.psi = wrap_angle(best->x(2));
    fit.b = best->x.tail(k);
    fit.converged = best->converged;
    fit.iterations = best->iterations;
    fit.cost_history = std::move(best->cost_history);

    // Mean per-point reprojection error, reported without robust weighting.
    detail::VehicleFitProblem plain(detection, prior, camera, b_template, 0.0, false, 0.0);
    VecX res;
    plain.evaluate(best->x, res, nullptr);
    double sum = 0.0;
    const int n_vis = static_cast<int>(plain.visible_slots.size());
    for (int i = 0; i < n_vis; ++i) sum += res.segment<2>(2 * i).norm();
    fit.residual_px = sum / std::max(n_vis, 1);
    return fit;
}

}  // namespace skytrack
