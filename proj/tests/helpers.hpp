#pragma once

#include <functional>
#include <random>

#include "skytrack/camera.hpp"
#include "skytrack/keypoints.hpp"
#include "skytrack/shape_prior.hpp"

namespace skytrack::testing {

// Right-handed look-at pose, +z forward in the camera frame.
inline CameraPose make_lookat_pose(const Vec3& center, const Vec3& target) {
    const Vec3 z = (target - center).normalized();
    const Vec3 up = std::abs(z.z()) > 0.999 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
    const Vec3 x = z.cross(up).normalized();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    return CameraPose{r, -r * center};
}

inline CameraIntrinsics make_intrinsics(double f = 3430.0, int w = 3840, int h = 2160) {
    CameraIntrinsics k;
    k.fx = k.fy = f;
    k.principal_point = Vec2(w / 2.0, h / 2.0);
    k.image_width = w;
    k.image_height = h;
    return k;
}

// Aerial view over `look_at`; tilt 0 is nadir, tilt > 0 moves the camera back
// along -x so it looks obliquely forward at the target.
inline CameraView make_aerial_view(const Vec2& look_at, double altitude, double tilt_deg,
                                   double f = 3430.0) {
    const double tilt = deg2rad(tilt_deg);
    const Vec3 target(look_at.x(), look_at.y(), 0.0);
    const Vec3 center = target + Vec3(-altitude * std::tan(tilt), 0.0, altitude);
    return CameraView{make_lookat_pose(center, target), make_intrinsics(f)};
}

inline Mat3 random_rotation(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

// Independent projection oracle: homogeneous 3x4 matrix product K [R | t].
inline Vec2 reference_projection(const CameraPose& pose, const CameraIntrinsics& k,
                                 const Vec3& world) {
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = pose.rotation;
    p.col(3) = pose.translation;
    const Eigen::Vector4d xh(world.x(), world.y(), world.z(), 1.0);
    const Vec3 uvw = k.matrix() * (p * xh);
    return Vec2(uvw.x() / uvw.z(), uvw.y() / uvw.z());
}

// Independent ground intersection oracle: invert the plane-induced homography
// K [r1 r2 t] instead of intersecting the viewing ray.
inline Vec2 reference_ground_point(const CameraPose& pose, const CameraIntrinsics& k,
                                   const Vec2& pixel) {
    Mat3 h;
    h.col(0) = pose.rotation.col(0);
    h.col(1) = pose.rotation.col(1);
    h.col(2) = pose.translation;
    const Vec3 g = (k.matrix() * h).inverse() * Vec3(pixel.x(), pixel.y(), 1.0);
    return Vec2(g.x() / g.z(), g.y() / g.z());
}

// Central-difference Jacobian of a residual function.
inline MatX finite_difference_jacobian(const std::function<VecX(const VecX&)>& f, const VecX& x,
                                       double h = 1e-6) {
    const VecX r0 = f(x);
    MatX jac(r0.size(), x.size());
    for (int c = 0; c < x.size(); ++c) {
        VecX hi = x, lo = x;
        const double step = h * std::max(1.0, std::abs(x(c)));
        hi(c) += step;
        lo(c) -= step;
        jac.col(c) = (f(hi) - f(lo)) / (2.0 * step);
    }
    return jac;
}

// Renders a detection by projecting the posed shape keypoints. All detectable
// slots are marked visible unless a subset is given; optional pixel noise.
inline KeypointDetection render_detection(const VecX& shape_coords, double x, double y, double psi,
                                          const CameraView& camera, double noise_sigma = 0.0,
                                          Rng* rng = nullptr,
                                          const std::vector<int>* visible_subset = nullptr) {
    KeypointDetection d;
    d.score = 0.99;
    const Mat3 rot = rot_z(psi);
    const Vec3 t(x, y, 0.0);
    Vec2 lo(1e18, 1e18), hi(-1e18, -1e18);
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for (int slot = 0; slot < kKeypointCount; ++slot) {
        const Vec3 world = rot * Vec3(shape_coords.segment<3>(3 * slot)) + t;
        Vec2 px = project(camera.pose, camera.intrinsics, world);
        lo = lo.cwiseMin(px);
        hi = hi.cwiseMax(px);
        bool visible = KeypointSchema::detectable(slot);
        if (visible_subset)
            visible = std::find(visible_subset->begin(), visible_subset->end(), slot) !=
                      visible_subset->end();
        if (visible && noise_sigma > 0.0 && rng) px += Vec2(gauss(*rng), gauss(*rng));
        d.keypoints[static_cast<std::size_t>(slot)] = {px, visible};
    }
    d.bounding_box = {lo.x(), lo.y(), hi.x(), hi.y()};
    return d;
}

}  // namespace skytrack::testing
