#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "skytrack/common.hpp"
#include "skytrack/io.hpp"

namespace skytrack {

struct CameraIntrinsics {
    double fx = 0.0;  // focal length, pixels
    double fy = 0.0;
    Vec2 principal_point{0.0, 0.0};
    int image_width = 0;
    int image_height = 0;

    Mat3 matrix() const {
        Mat3 k = Mat3::Identity();
        k(0, 0) = fx;
        k(1, 1) = fy;
        k(0, 2) = principal_point.x();
        k(1, 2) = principal_point.y();
        return k;
    }

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw PreconditionError("intrinsics: focal lengths must be positive");
        if (image_width <= 0 || image_height <= 0)
            throw PreconditionError("intrinsics: image size must be positive");
        if (principal_point.x() < 0 || principal_point.x() > image_width ||
            principal_point.y() < 0 || principal_point.y() > image_height)
            throw PreconditionError("intrinsics: principal point outside image bounds");
    }
};

// World-to-camera transform: q = R * x + t.
struct CameraPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 camera_center() const { return -rotation.transpose() * translation; }

    void validate(double tol = 1e-8) const {
        if ((rotation * rotation.transpose() - Mat3::Identity()).norm() > tol)
            throw PreconditionError("camera pose: rotation is not orthonormal");
        if (rotation.determinant() < 0.0)
            throw PreconditionError("camera pose: rotation has negative determinant");
        if (camera_center().z() <= 0.0)
            throw PreconditionError("camera pose: camera center must be above the ground plane");
    }
};

struct CameraView {
    CameraPose pose;
    CameraIntrinsics intrinsics;
};

// Annotated map-to-image correspondence; the map point lies on the z = 0 ground plane.
struct GroundCorrespondence {
    Vec2 map_point;    // meters
    Vec2 image_point;  // pixels

    Vec3 world() const { return Vec3(map_point.x(), map_point.y(), 0.0); }
};

inline Vec2 project(const CameraPose& pose, const CameraIntrinsics& intrinsics,
                    const Vec3& world_point) {
    const Vec3 q = pose.rotation * world_point + pose.translation;
    if (q.z() <= 1e-12) throw PreconditionError("project: point is behind the camera");
    return Vec2(intrinsics.fx * q.x() / q.z() + intrinsics.principal_point.x(),
                intrinsics.fy * q.y() / q.z() + intrinsics.principal_point.y());
}

// Intersects the viewing ray of `pixel` with the z = 0 ground plane.
inline Vec2 back_project_to_ground(const CameraPose& pose, const CameraIntrinsics& intrinsics,
                                   const Vec2& pixel) {
    const Vec3 dir_cam((pixel.x() - intrinsics.principal_point.x()) / intrinsics.fx,
                       (pixel.y() - intrinsics.principal_point.y()) / intrinsics.fy, 1.0);
    const Vec3 dir = pose.rotation.transpose() * dir_cam;
    const Vec3 center = pose.camera_center();
    if (std::abs(dir.z()) < 1e-12)
        throw PreconditionError("back_project_to_ground: ray parallel to ground plane");
    const double s = -center.z() / dir.z();
    if (s <= 0.0)
        throw PreconditionError(
            "back_project_to_ground: ray does not hit the ground in front of the camera");
    const Vec3 g = center + s * dir;
    return Vec2(g.x(), g.y());
}

struct PnpResult {
    CameraPose pose;
    double rms_reprojection_px = 0.0;
    int iterations = 0;
};

namespace detail {

inline Mat3 rodrigues(const Vec3& w) {
    const double theta = w.norm();
    if (theta < 1e-12) {
        Mat3 r = Mat3::Identity();
        r(0, 1) = -w.z(); r(0, 2) = w.y();
        r(1, 0) = w.z();  r(1, 2) = -w.x();
        r(2, 0) = -w.y(); r(2, 1) = w.x();
        return r;
    }
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

inline bool points_collinear(std::span<const GroundCorrespondence> corr, double tol = 1e-9) {
    Vec2 mean = Vec2::Zero();
    for (const auto& c : corr) mean += c.map_point;
    mean /= static_cast<double>(corr.size());
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
    for (const auto& c : corr) {
        const Vec2 d = c.map_point - mean;
        scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(scatter);
    return es.eigenvalues()(0) <= tol * std::max(es.eigenvalues()(1), 1.0);
}

// Normalized DLT homography from ground (x, y) to pixels.
inline Mat3 fit_homography(std::span<const GroundCorrespondence> corr) {
    const auto n = corr.size();
    Vec2 mean_m = Vec2::Zero(), mean_i = Vec2::Zero();
    for (const auto& c : corr) {
        mean_m += c.map_point;
        mean_i += c.image_point;
    }
    mean_m /= double(n);
    mean_i /= double(n);
    double scale_m = 0.0, scale_i = 0.0;
    for (const auto& c : corr) {
        scale_m += (c.map_point - mean_m).norm();
        scale_i += (c.image_point - mean_i).norm();
    }
    scale_m = std::sqrt(2.0) * double(n) / std::max(scale_m, 1e-12);
    scale_i = std::sqrt(2.0) * double(n) / std::max(scale_i, 1e-12);

    Mat3 t_m = Mat3::Identity(), t_i = Mat3::Identity();
    t_m(0, 0) = t_m(1, 1) = scale_m;
    t_m.block<2, 1>(0, 2) = -scale_m * mean_m;
    t_i(0, 0) = t_i(1, 1) = scale_i;
    t_i.block<2, 1>(0, 2) = -scale_i * mean_i;

    MatX a(2 * n, 9);
    for (std::size_t r = 0; r < n; ++r) {
        const Vec2 m = scale_m * (corr[r].map_point - mean_m);
        const Vec2 p = scale_i * (corr[r].image_point - mean_i);
        a.row(2 * r) << -m.x(), -m.y(), -1, 0, 0, 0, p.x() * m.x(), p.x() * m.y(), p.x();
        a.row(2 * r + 1) << 0, 0, 0, -m.x(), -m.y(), -1, p.y() * m.x(), p.y() * m.y(), p.y();
    }
    Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(7) <= 1e-10 * std::max(sv(0), 1.0))
        throw SolverError("solve_pnp: degenerate correspondence configuration");
    const VecX h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    return t_i.inverse() * hn * t_m;
}

inline double rms_reprojection(const CameraPose& pose, const CameraIntrinsics& k,
                               std::span<const GroundCorrespondence> corr) {
    double ss = 0.0;
    for (const auto& c : corr) ss += (project(pose, k, c.world()) - c.image_point).squaredNorm();
    return std::sqrt(ss / static_cast<double>(corr.size()));
}

}  // namespace detail

// Pose from coplanar (z = 0) correspondences: homography decomposition for the
// initial guess, then Levenberg-Marquardt over the 6-DoF pose on reprojection error.
inline PnpResult solve_pnp(std::span<const GroundCorrespondence> correspondences,
                           const CameraIntrinsics& intrinsics, int max_iterations = 50,
                           double step_tolerance = 1e-12) {
    intrinsics.validate();
    if (correspondences.size() < 4)
        throw PreconditionError("solve_pnp: at least 4 correspondences required");
    if (detail::points_collinear(correspondences))
        throw SolverError("solve_pnp: correspondences are collinear");

    const Mat3 h = detail::fit_homography(correspondences);
    const Mat3 m = intrinsics.matrix().inverse() * h;
    double lambda = 2.0 / (m.col(0).norm() + m.col(1).norm());

    // Pick the sign placing the annotated points in front of the camera.
    Vec2 centroid = Vec2::Zero();
    for (const auto& c : correspondences) centroid += c.map_point;
    centroid /= static_cast<double>(correspondences.size());
    if ((lambda * m * Vec3(centroid.x(), centroid.y(), 1.0)).z() < 0.0) lambda = -lambda;

    const Vec3 r1 = lambda * m.col(0);
    const Vec3 r2 = lambda * m.col(1);
    Mat3 r_approx;
    r_approx << r1, r2, r1.cross(r2);
    Eigen::JacobiSVD<Mat3> svd(r_approx, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Mat3 d = Mat3::Identity();
        d(2, 2) = -1.0;
        r = svd.matrixU() * d * svd.matrixV().transpose();
    }
    CameraPose pose{r, lambda * m.col(2)};

    const std::size_t n = correspondences.size();
    auto residuals = [&](const CameraPose& p, VecX& res) {
        res.resize(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 q = p.rotation * correspondences[i].world() + p.translation;
            if (q.z() <= 1e-9) {
                res.setConstant(1e12);
                return;
            }
            const Vec2 proj(intrinsics.fx * q.x() / q.z() + intrinsics.principal_point.x(),
                            intrinsics.fy * q.y() / q.z() + intrinsics.principal_point.y());
            res.segment<2>(2 * i) = correspondences[i].image_point - proj;
        }
    };

    // Rotation is updated through a local so(3) perturbation, rebased each accepted step.
    VecX res;
    residuals(pose, res);
    double cost = res.squaredNorm();
    double mu = 1e-4;
    int iterations = 0;
    for (; iterations < max_iterations; ++iterations) {
        MatX jac(2 * n, 6);  // columns: so(3) perturbation, translation
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 pw = correspondences[i].world();
            const Vec3 q = pose.rotation * pw + pose.translation;
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << intrinsics.fx / q.z(), 0, -intrinsics.fx * q.x() / (q.z() * q.z()),
                     0, intrinsics.fy / q.z(), -intrinsics.fy * q.y() / (q.z() * q.z());
            Mat3 skew;
            skew << 0, -pw.z(), pw.y(), pw.z(), 0, -pw.x(), -pw.y(), pw.x(), 0;
            // residual = observed - projected, so dr/dw = dproj * R * [p]x, dr/dt = -dproj
            jac.block<2, 3>(2 * i, 0) = dproj * pose.rotation * skew;
            jac.block<2, 3>(2 * i, 3) = -dproj;
        }
        const MatX jtj = jac.transpose() * jac;
        const VecX g = jac.transpose() * res;
        bool stepped = false;
        double step_norm = 0.0;
        for (int inner = 0; inner < 12 && !stepped; ++inner) {
            MatX a = jtj;
            a.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
            const VecX delta = a.ldlt().solve(-g);
            CameraPose cand{pose.rotation * detail::rodrigues(delta.head<3>()),
                            pose.translation + delta.tail<3>()};
            VecX cand_res;
            residuals(cand, cand_res);
            if (cand_res.squaredNorm() <= cost) {
                pose = cand;
                res = cand_res;
                cost = cand_res.squaredNorm();
                mu = std::max(mu * 0.3, 1e-12);
                step_norm = delta.norm();
                stepped = true;
            } else {
                mu *= 4.0;
            }
        }
        if (!stepped || step_norm < step_tolerance) {
            ++iterations;
            break;
        }
    }
    pose.validate();
    return PnpResult{pose, detail::rms_reprojection(pose, intrinsics, correspondences), iterations};
}

// One tracked reference point on the ground, anchored to a known world location.
struct ReferencePoint {
    int id = 0;
    Vec2 anchor_pixel = Vec2::Zero();
    Vec3 world = Vec3::Zero();  // z = 0
};

struct TrackedPoint {
    int point_id = 0;
    Vec2 pixel = Vec2::Zero();
    bool valid = false;
};

// Ground reference points tracked across the video for per-frame recalibration.
struct ReferencePointSet {
    std::vector<ReferencePoint> points;
    std::vector<std::vector<TrackedPoint>> frames;  // frames[f] lists tracked positions

    const ReferencePoint* find(int id) const {
        for (const auto& p : points)
            if (p.id == id) return &p;
        return nullptr;
    }
};

// Assigns world coordinates to tracked points by back-projecting their positions
// in the anchor frame (frame 0) through the anchor pose.
inline ReferencePointSet reference_set_from_anchor(
    const CameraPose& anchor_pose, const CameraIntrinsics& intrinsics,
    std::vector<std::vector<TrackedPoint>> frames) {
    if (frames.empty()) throw PreconditionError("reference set: no frames");
    ReferencePointSet set;
    for (const auto& tp : frames.front()) {
        if (!tp.valid) continue;
        const Vec2 g = back_project_to_ground(anchor_pose, intrinsics, tp.pixel);
        set.points.push_back({tp.point_id, tp.pixel, Vec3(g.x(), g.y(), 0.0)});
    }
    if (set.points.size() < 4)
        throw PreconditionError("reference set: fewer than 4 valid points in the anchor frame");
    set.frames = std::move(frames);
    return set;
}

struct RecalibrationResult {
    CameraPose pose;
    bool degraded = false;  // set when the previous pose was carried forward
    double rms_reprojection_px = 0.0;
    int points_used = 0;
};

// Per-frame PnP on the tracked reference points. Points whose reprojection error
// exceeds reject_threshold_px after a first solve are dropped and the pose refit.
// Falls back to `previous` (flagged) when fewer than 4 usable points remain.
inline RecalibrationResult recalibrate(const ReferencePointSet& reference, int frame_index,
                                       const CameraIntrinsics& intrinsics,
                                       const std::optional<CameraPose>& previous,
                                       double reject_threshold_px = 3.0) {
    if (frame_index < 0 || frame_index >= static_cast<int>(reference.frames.size()))
        throw PreconditionError("recalibrate: frame index out of range");

    std::vector<GroundCorrespondence> corr;
    for (const auto& tp : reference.frames[frame_index]) {
        if (!tp.valid) continue;
        const ReferencePoint* rp = reference.find(tp.point_id);
        if (!rp) continue;
        corr.push_back({Vec2(rp->world.x(), rp->world.y()), tp.pixel});
    }

    auto fall_back = [&]() -> RecalibrationResult {
        if (!previous)
            throw PreconditionError(
                "recalibrate: fewer than 4 valid reference points and no previous pose");
        return RecalibrationResult{*previous, true, 0.0, 0};
    };

    if (corr.size() < 4) return fall_back();

    // Badly tracked points are rejected one at a time (worst reprojection
    // first) until every survivor is within the threshold.
    PnpResult fit;
    while (true) {
        try {
            fit = solve_pnp(corr, intrinsics);
        } catch (const SolverError&) {
            return fall_back();
        }
        if (reject_threshold_px <= 0.0) break;
        std::size_t worst = 0;
        double worst_err = 0.0;
        for (std::size_t i = 0; i < corr.size(); ++i) {
            const double err =
                (project(fit.pose, intrinsics, corr[i].world()) - corr[i].image_point).norm();
            if (err > worst_err) {
                worst_err = err;
                worst = i;
            }
        }
        if (worst_err <= reject_threshold_px) break;
        if (corr.size() <= 4) return fall_back();
        corr.erase(corr.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    return RecalibrationResult{fit.pose, false, fit.rms_reprojection_px,
                               static_cast<int>(corr.size())};
}

// ---------------------------------------------------------------------------
// File formats

struct CalibrationConfig {
    CameraIntrinsics intrinsics;
    double map_scale_m_per_unit = 1.0;
    std::vector<GroundCorrespondence> anchor_correspondences;  // map points already in meters
    double reproj_reject_px = 3.0;
};

inline CalibrationConfig parse_calibration_config(const io::json& j) {
    CalibrationConfig cfg;
    const auto ji = io::require<io::json>(j, "intrinsics", "calibration");
    cfg.intrinsics.fx = io::require<double>(ji, "fx", "calibration.intrinsics");
    cfg.intrinsics.fy = io::require<double>(ji, "fy", "calibration.intrinsics");
    cfg.intrinsics.principal_point =
        Vec2(io::require<double>(ji, "cx", "calibration.intrinsics"),
             io::require<double>(ji, "cy", "calibration.intrinsics"));
    cfg.intrinsics.image_width = io::require<int>(ji, "image_width", "calibration.intrinsics");
    cfg.intrinsics.image_height = io::require<int>(ji, "image_height", "calibration.intrinsics");
    cfg.intrinsics.validate();
    cfg.map_scale_m_per_unit = io::get_or<double>(j, "map_scale_m_per_unit", 1.0);
    if (!(cfg.map_scale_m_per_unit > 0.0))
        throw ParseError("calibration: map_scale_m_per_unit must be positive");
    cfg.reproj_reject_px = io::get_or<double>(j, "reproj_reject_px", 3.0);
    for (const auto& jc : io::require<io::json>(j, "anchor_correspondences", "calibration")) {
        const auto m = io::require<std::vector<double>>(jc, "map", "calibration correspondence");
        const auto p = io::require<std::vector<double>>(jc, "pixel", "calibration correspondence");
        if (m.size() != 2 || p.size() != 2)
            throw ParseError("calibration correspondence: map and pixel must have 2 entries");
        cfg.anchor_correspondences.push_back(
            {cfg.map_scale_m_per_unit * Vec2(m[0], m[1]), Vec2(p[0], p[1])});
    }
    return cfg;
}

inline CalibrationConfig load_calibration_config(const std::filesystem::path& path) {
    return parse_calibration_config(io::load_json_file(path));
}

inline io::json calibration_config_to_json(const CalibrationConfig& cfg) {
    io::json j;
    j["intrinsics"] = {{"fx", cfg.intrinsics.fx},
                       {"fy", cfg.intrinsics.fy},
                       {"cx", cfg.intrinsics.principal_point.x()},
                       {"cy", cfg.intrinsics.principal_point.y()},
                       {"image_width", cfg.intrinsics.image_width},
                       {"image_height", cfg.intrinsics.image_height}};
    j["map_scale_m_per_unit"] = cfg.map_scale_m_per_unit;
    j["reproj_reject_px"] = cfg.reproj_reject_px;
    auto arr = io::json::array();
    for (const auto& c : cfg.anchor_correspondences) {
        const Vec2 m = c.map_point / cfg.map_scale_m_per_unit;
        arr.push_back({{"map", {m.x(), m.y()}}, {"pixel", {c.image_point.x(), c.image_point.y()}}});
    }
    j["anchor_correspondences"] = arr;
    return j;
}

inline void save_calibration_config(const std::filesystem::path& path,
                                    const CalibrationConfig& cfg) {
    io::atomic_write(path, calibration_config_to_json(cfg).dump(2) + "\n");
}

inline std::string reference_tracks_to_string(
    const std::vector<std::vector<TrackedPoint>>& frames) {
    std::string out;
    io::json header{{"format", "skytrack-reftracks"}, {"version", 1}};
    out += header.dump();
    out += '\n';
    for (std::size_t f = 0; f < frames.size(); ++f) {
        io::json line;
        line["frame"] = f;
        auto pts = io::json::array();
        for (const auto& p : frames[f])
            pts.push_back({{"id", p.point_id},
                           {"u", p.pixel.x()},
                           {"v", p.pixel.y()},
                           {"valid", p.valid}});
        line["points"] = pts;
        out += line.dump();
        out += '\n';
    }
    return out;
}

inline void save_reference_tracks(const std::filesystem::path& path,
                                  const std::vector<std::vector<TrackedPoint>>& frames) {
    io::atomic_write(path, reference_tracks_to_string(frames));
}

inline std::vector<std::vector<TrackedPoint>> load_reference_tracks(
    const std::filesystem::path& path) {
    const auto lines = io::split_lines(io::read_text_file(path));
    if (lines.empty()) throw ParseError("reference tracks: empty file");
    const auto header = io::parse_json(lines[0], "reference tracks header");
    if (io::get_or<std::string>(header, "format", "") != "skytrack-reftracks")
        throw ParseError("reference tracks: unexpected format tag");
    std::vector<std::vector<TrackedPoint>> frames;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto j = io::parse_json(lines[i], "reference tracks line " + std::to_string(i));
        const int frame = io::require<int>(j, "frame", "reference tracks");
        if (frame != static_cast<int>(frames.size()))
            throw ParseError("reference tracks: frames must be contiguous from 0");
        std::vector<TrackedPoint> pts;
        for (const auto& jp : io::require<io::json>(j, "points", "reference tracks")) {
            TrackedPoint tp;
            tp.point_id = io::require<int>(jp, "id", "reference tracks point");
            tp.pixel = Vec2(io::require<double>(jp, "u", "reference tracks point"),
                            io::require<double>(jp, "v", "reference tracks point"));
            tp.valid = io::require<bool>(jp, "valid", "reference tracks point");
            pts.push_back(tp);
        }
        frames.push_back(std::move(pts));
    }
    return frames;
}

}  // namespace skytrack
