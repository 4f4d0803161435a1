#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "skytrack/common.hpp"
#include "skytrack/io.hpp"
#include "skytrack/keypoints.hpp"

namespace skytrack {

// Concatenated (x, y, z) body-frame coordinates of all 33 keypoints.
// Body frame: origin at the ground-projected chassis center, x forward,
// y left, z up; wheel-ground contact points lie exactly on z = 0.
struct ShapeVector {
    VecX coords = VecX::Zero(3 * kKeypointCount);
    std::string category;

    Vec3 point(int slot) const { return coords.segment<3>(3 * slot); }
    void set_point(int slot, const Vec3& p) { coords.segment<3>(3 * slot) = p; }

    void validate(double symmetry_tol = 0.05) const {
        if (coords.size() != 3 * kKeypointCount)
            throw PreconditionError("shape vector: wrong dimension");
        for (int slot = 28; slot <= 31; ++slot)
            if (std::abs(point(slot).z()) > 1e-6)
                throw PreconditionError("shape vector: wheel-ground contact point off the ground");
        for (const auto& [right, left] : KeypointSchema::left_right_pairs()) {
            const Vec3 r = point(right), l = point(left);
            if (std::abs(r.x() - l.x()) > symmetry_tol ||
                std::abs(r.y() + l.y()) > symmetry_tol ||
                std::abs(r.z() - l.z()) > symmetry_tol)
                throw PreconditionError("shape vector: left/right symmetry violated at slots " +
                                        std::to_string(right) + "/" + std::to_string(left));
        }
        const auto [length, width, height] = extents();
        if (!(length > width) || !(width > 0.0))
            throw PreconditionError("shape vector: length must exceed width must exceed 0");
        (void)height;
    }

    struct Extents {
        double length, width, height;
    };
    Extents extents() const {
        Vec3 lo = point(0), hi = point(0);
        for (int s = 1; s < kKeypointCount; ++s) {
            lo = lo.cwiseMin(point(s));
            hi = hi.cwiseMax(point(s));
        }
        return {hi.x() - lo.x(), hi.y() - lo.y(), hi.z() - lo.z()};
    }
};

using ShapeParams = VecX;

struct Dimensions {
    double length = 0.0;
    double width = 0.0;
    double height = 0.0;
};

inline Dimensions shape_dimensions(const VecX& coords) {
    ShapeVector s;
    s.coords = coords;
    const auto e = s.extents();
    return {e.length, e.width, e.height};
}

// PCA decomposition over a fleet of shape vectors plus the per-category
// template parameters used to regularize and initialize model fitting.
struct ShapePrior {
    VecX mean_shape;                          // 99
    MatX basis;                               // 99 x k, orthonormal columns
    std::vector<VecX> training_params;        // b_i
    std::vector<std::string> training_labels; // category of each b_i
    std::map<std::string, VecX> templates;    // per-category mean of b_i
    VecX explained_variance_ratio;            // per component, non-increasing
    double training_residual = 0.0;           // sum over models of |s_i - s_hat_i|^2

    int k() const { return static_cast<int>(basis.cols()); }

    const VecX& template_for(const std::string& category) const {
        auto it = templates.find(category);
        if (it == templates.end())
            throw PreconditionError("shape prior: unknown category '" + category + "'");
        return it->second;
    }

    // Template for the category if known, otherwise the mean shape (b = 0).
    VecX template_or_mean(const std::string& category) const {
        auto it = templates.find(category);
        return it != templates.end() ? it->second : VecX::Zero(k()).eval();
    }
};

inline ShapePrior build_prior(std::span<const ShapeVector> shapes, int k) {
    const int n = static_cast<int>(shapes.size());
    if (k < 1 || k > 3 * kKeypointCount) throw PreconditionError("build_prior: invalid k");
    if (n < k + 1) throw PreconditionError("build_prior: need at least k+1 shapes");
    for (const auto& s : shapes) s.validate();

    const int dim = 3 * kKeypointCount;
    VecX mean = VecX::Zero(dim);
    for (const auto& s : shapes) mean += s.coords;
    mean /= double(n);

    MatX centered(dim, n);
    for (int i = 0; i < n; ++i) centered.col(i) = shapes[i].coords - mean;

    const MatX covariance = centered * centered.transpose() / double(n - 1);
    Eigen::SelfAdjointEigenSolver<MatX> es(covariance);
    if (es.info() != Eigen::Success) throw SolverError("build_prior: eigendecomposition failed");

    // Eigen returns ascending eigenvalues; take the top k in descending order.
    ShapePrior prior;
    prior.mean_shape = mean;
    prior.basis.resize(dim, k);
    VecX eigvals = es.eigenvalues().cwiseMax(0.0);
    double total_var = eigvals.sum();
    prior.explained_variance_ratio.resize(k);
    for (int c = 0; c < k; ++c) {
        const int src = dim - 1 - c;
        VecX col = es.eigenvectors().col(src);
        // Deterministic sign: largest-magnitude coefficient is positive.
        int arg_max = 0;
        col.cwiseAbs().maxCoeff(&arg_max);
        if (col(arg_max) < 0.0) col = -col;
        prior.basis.col(c) = col;
        prior.explained_variance_ratio(c) = total_var > 0.0 ? eigvals(src) / total_var : 0.0;
    }

    std::map<std::string, std::pair<VecX, int>> by_category;
    for (int i = 0; i < n; ++i) {
        VecX b = prior.basis.transpose() * centered.col(i);
        prior.training_residual += (centered.col(i) - prior.basis * b).squaredNorm();
        prior.training_labels.push_back(shapes[i].category);
        auto [it, inserted] = by_category.try_emplace(shapes[i].category, VecX::Zero(k), 0);
        it->second.first += b;
        it->second.second += 1;
        prior.training_params.push_back(std::move(b));
    }
    for (auto& [label, acc] : by_category) prior.templates[label] = acc.first / double(acc.second);
    return prior;
}

inline ShapeVector generate_shape(const ShapePrior& prior, const ShapeParams& b) {
    if (b.size() != prior.k())
        throw PreconditionError("generate_shape: parameter dimension mismatch");
    ShapeVector s;
    s.coords = prior.basis * b + prior.mean_shape;
    return s;
}

// Least-squares coordinates of a shape in the prior's basis.
inline ShapeParams project_shape(const ShapePrior& prior, const VecX& coords) {
    return prior.basis.transpose() * (coords - prior.mean_shape);
}

struct TypeVote {
    std::string label;
    int votes = 0;
    double mean_distance = 0.0;
};

struct Classification {
    std::string label;
    std::vector<TypeVote> votes;
};

// Majority label among the n nearest training parameters (Euclidean distance).
// Ties break by smaller mean distance, then lexicographically smaller label.
inline Classification classify_type(const ShapePrior& prior, const ShapeParams& b,
                                    int n_neighbors) {
    const int n = static_cast<int>(prior.training_params.size());
    if (n == 0) throw PreconditionError("classify_type: empty prior");
    if (n_neighbors < 1 || n_neighbors > n)
        throw PreconditionError("classify_type: n_neighbors out of range");
    if (b.size() != prior.k())
        throw PreconditionError("classify_type: parameter dimension mismatch");

    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i)
        dist[i] = {(prior.training_params[i] - b).norm(), i};
    std::stable_sort(dist.begin(), dist.end(),
                     [](const auto& a, const auto& c) { return a.first < c.first; });

    std::map<std::string, TypeVote> tally;
    for (int i = 0; i < n_neighbors; ++i) {
        const auto& label = prior.training_labels[static_cast<std::size_t>(dist[i].second)];
        auto& vote = tally[label];
        vote.label = label;
        vote.votes += 1;
        vote.mean_distance += dist[i].first;
    }
    Classification result;
    for (auto& [label, vote] : tally) {
        vote.mean_distance /= vote.votes;
        result.votes.push_back(vote);
    }
    std::sort(result.votes.begin(), result.votes.end(), [](const TypeVote& a, const TypeVote& b2) {
        if (a.votes != b2.votes) return a.votes > b2.votes;
        if (a.mean_distance != b2.mean_distance) return a.mean_distance < b2.mean_distance;
        return a.label < b2.label;
    });
    result.label = result.votes.front().label;
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline io::json prior_to_json(const ShapePrior& prior) {
    io::json j;
    j["format"] = "skytrack-shape-prior";
    j["version"] = 1;
    j["k"] = prior.k();
    j["mean"] = std::vector<double>(prior.mean_shape.data(),
                                    prior.mean_shape.data() + prior.mean_shape.size());
    auto basis = io::json::array();
    for (int c = 0; c < prior.k(); ++c) {
        const VecX col = prior.basis.col(c);
        basis.push_back(std::vector<double>(col.data(), col.data() + col.size()));
    }
    j["basis_columns"] = basis;
    auto training = io::json::array();
    for (std::size_t i = 0; i < prior.training_params.size(); ++i) {
        const VecX& b = prior.training_params[i];
        training.push_back({{"b", std::vector<double>(b.data(), b.data() + b.size())},
                            {"category", prior.training_labels[i]}});
    }
    j["training"] = training;
    io::json templates;
    for (const auto& [label, b] : prior.templates)
        templates[label] = std::vector<double>(b.data(), b.data() + b.size());
    j["templates"] = templates;
    j["explained_variance_ratio"] = std::vector<double>(
        prior.explained_variance_ratio.data(),
        prior.explained_variance_ratio.data() + prior.explained_variance_ratio.size());
    j["training_residual"] = prior.training_residual;
    return j;
}

inline ShapePrior prior_from_json(const io::json& j) {
    if (io::get_or<std::string>(j, "format", "") != "skytrack-shape-prior")
        throw ParseError("shape prior: unexpected format tag");
    ShapePrior prior;
    const int k = io::require<int>(j, "k", "shape prior");
    const auto mean = io::require<std::vector<double>>(j, "mean", "shape prior");
    if (mean.size() != 3 * kKeypointCount) throw ParseError("shape prior: bad mean dimension");
    prior.mean_shape = Eigen::Map<const VecX>(mean.data(), mean.size());
    const auto basis = io::require<io::json>(j, "basis_columns", "shape prior");
    if (static_cast<int>(basis.size()) != k) throw ParseError("shape prior: bad basis dimension");
    prior.basis.resize(3 * kKeypointCount, k);
    for (int c = 0; c < k; ++c) {
        const auto col = basis[static_cast<std::size_t>(c)].get<std::vector<double>>();
        if (col.size() != 3 * kKeypointCount)
            throw ParseError("shape prior: bad basis column dimension");
        prior.basis.col(c) = Eigen::Map<const VecX>(col.data(), col.size());
    }
    for (const auto& jt : io::require<io::json>(j, "training", "shape prior")) {
        const auto b = io::require<std::vector<double>>(jt, "b", "shape prior training");
        if (static_cast<int>(b.size()) != k)
            throw ParseError("shape prior: bad training parameter dimension");
        prior.training_params.push_back(Eigen::Map<const VecX>(b.data(), b.size()));
        prior.training_labels.push_back(
            io::require<std::string>(jt, "category", "shape prior training"));
    }
    for (const auto& [label, jb] : io::require<io::json>(j, "templates", "shape prior").items()) {
        const auto b = jb.get<std::vector<double>>();
        if (static_cast<int>(b.size()) != k)
            throw ParseError("shape prior: bad template dimension");
        prior.templates[label] = Eigen::Map<const VecX>(b.data(), b.size());
    }
    const auto evr =
        io::require<std::vector<double>>(j, "explained_variance_ratio", "shape prior");
    prior.explained_variance_ratio = Eigen::Map<const VecX>(evr.data(), evr.size());
    prior.training_residual = io::get_or<double>(j, "training_residual", 0.0);
    return prior;
}

inline void save_prior(const std::filesystem::path& path, const ShapePrior& prior) {
    io::atomic_write(path, prior_to_json(prior).dump() + "\n");
}

inline ShapePrior load_prior(const std::filesystem::path& path) {
    return prior_from_json(io::load_json_file(path));
}

// Annotated-model file: 33 labeled 3D points per model plus a category string.
inline std::vector<ShapeVector> parse_shape_models(const io::json& j) {
    if (io::get_or<std::string>(j, "format", "") != "skytrack-shape-models")
        throw ParseError("shape models: unexpected format tag");
    std::vector<ShapeVector> shapes;
    for (const auto& jm : io::require<io::json>(j, "models", "shape models")) {
        ShapeVector s;
        s.category = io::require<std::string>(jm, "category", "shape model");
        const auto pts = io::require<io::json>(jm, "points", "shape model");
        if (!pts.is_array() || pts.size() != kKeypointCount)
            throw ParseError("shape model: points must be an array of 33 entries");
        for (int slot = 0; slot < kKeypointCount; ++slot) {
            const auto p = pts[static_cast<std::size_t>(slot)].get<std::vector<double>>();
            if (p.size() != 3) throw ParseError("shape model: each point must be [x, y, z]");
            s.set_point(slot, Vec3(p[0], p[1], p[2]));
        }
        shapes.push_back(std::move(s));
    }
    return shapes;
}

inline std::vector<ShapeVector> load_shape_models(const std::filesystem::path& path) {
    return parse_shape_models(io::load_json_file(path));
}

inline void save_shape_models(const std::filesystem::path& path,
                              std::span<const ShapeVector> shapes) {
    io::json j;
    j["format"] = "skytrack-shape-models";
    j["version"] = 1;
    auto models = io::json::array();
    for (const auto& s : shapes) {
        auto pts = io::json::array();
        for (int slot = 0; slot < kKeypointCount; ++slot) {
            const Vec3 p = s.point(slot);
            pts.push_back({p.x(), p.y(), p.z()});
        }
        models.push_back({{"category", s.category}, {"points", pts}});
    }
    j["models"] = models;
    io::atomic_write(path, j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Procedural synthetic fleet
//
// Stands in for a hand-annotated 3D model library: box-with-cabin archetypes
// at randomized dimensions, exactly left/right symmetric, wheels on z = 0.

struct BodyParams {
    double length, width, height;
    double wheelbase_frac;   // wheelbase / length
    double roof_front_frac;  // roof front edge as a fraction of length/2
    double roof_rear_frac;   // roof rear edge as a fraction of length/2
    double belt_frac;        // beltline height as a fraction of height
    double wheel_radius;
};

inline ShapeVector make_body_shape(const BodyParams& p, const std::string& category) {
    const double hl = 0.5 * p.length;
    const double hw = 0.5 * p.width;
    const double h = p.height;
    const double roof_y = 0.72 * hw;
    const double wb = p.wheelbase_frac * p.length;
    const double belt = p.belt_frac * h;

    ShapeVector s;
    s.category = category;
    auto mirror = [&](int right_slot, const Vec3& right) {
        s.set_point(right_slot, right);
        s.set_point(right_slot + 1, Vec3(right.x(), -right.y(), right.z()));
    };
    // Quadruples are ordered front-right, front-left, rear-right, rear-left;
    // the right side is y < 0 (x forward, y left, z up).
    mirror(0, Vec3(p.roof_front_frac * hl, -roof_y, h));           // roof front
    mirror(2, Vec3(-p.roof_rear_frac * hl, -roof_y, h));           // roof rear
    mirror(4, Vec3(0.55 * hl, -0.85 * hw, belt));                  // windshield front base
    mirror(6, Vec3(-0.78 * hl, -0.82 * hw, belt));                 // windshield rear base
    mirror(8, Vec3(0.96 * hl, -0.70 * hw, 0.40 * h));              // front lights
    mirror(10, Vec3(-0.96 * hl, -0.70 * hw, 0.42 * h));            // rear lights
    mirror(12, Vec3(hl, -0.92 * hw, 0.30 * h));                    // front bumper corners
    mirror(14, Vec3(-hl, -0.92 * hw, 0.32 * h));                   // rear bumper corners
    mirror(16, Vec3(0.5 * wb, -0.90 * hw, p.wheel_radius));        // front wheel centers
    mirror(18, Vec3(-0.5 * wb, -0.90 * hw, p.wheel_radius));       // rear wheel centers
    mirror(20, Vec3(0.88 * hl, -0.88 * hw, 0.10 * h));             // chassis bottom front
    mirror(22, Vec3(-0.88 * hl, -0.88 * hw, 0.10 * h));            // chassis bottom rear
    mirror(24, Vec3(0.42 * hl, -(hw + 0.11), 0.62 * h));           // side mirrors
    mirror(26, Vec3(0.12 * hl, -0.90 * hw, 0.80 * h));             // front door windows
    mirror(28, Vec3(0.5 * wb, -0.90 * hw, 0.0));                   // wheel-ground front
    mirror(30, Vec3(-0.5 * wb, -0.90 * hw, 0.0));                  // wheel-ground rear
    s.set_point(32, Vec3(hl, 0.0, 0.34 * h));                      // brand logo
    return s;
}

inline const std::vector<std::string>& fleet_categories() {
    static const std::vector<std::string> cats = {"hatchback", "pickup", "sedan", "suv", "van"};
    return cats;
}

namespace detail {

struct ArchetypeRange {
    double length_lo, length_hi;
    double width_lo, width_hi;
    double height_lo, height_hi;
    double roof_front, roof_rear;
    double wheelbase_frac;
    double belt_frac;
    double wheel_radius;
};

inline const std::map<std::string, ArchetypeRange>& archetype_ranges() {
    static const std::map<std::string, ArchetypeRange> ranges = {
        {"sedan", {4.5, 4.9, 1.78, 1.86, 1.40, 1.50, 0.28, 0.52, 0.58, 0.55, 0.33}},
        {"suv", {4.6, 5.0, 1.90, 2.00, 1.70, 1.85, 0.32, 0.72, 0.59, 0.50, 0.36}},
        {"hatchback", {4.0, 4.3, 1.74, 1.80, 1.44, 1.56, 0.30, 0.82, 0.60, 0.52, 0.31}},
        {"pickup", {5.3, 5.9, 2.00, 2.10, 1.88, 2.00, 0.38, 0.08, 0.62, 0.50, 0.38}},
        {"van", {5.1, 5.4, 1.94, 2.06, 1.90, 2.10, 0.58, 0.85, 0.60, 0.45, 0.34}},
    };
    return ranges;
}

}  // namespace detail

inline BodyParams sample_body_params(const std::string& category, Rng& rng) {
    const auto& r = detail::archetype_ranges().at(category);
    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    BodyParams p;
    p.length = uniform(r.length_lo, r.length_hi);
    p.width = uniform(r.width_lo, r.width_hi);
    p.height = uniform(r.height_lo, r.height_hi);
    p.roof_front_frac = r.roof_front + uniform(-0.02, 0.02);
    p.roof_rear_frac = r.roof_rear + uniform(-0.02, 0.02);
    p.wheelbase_frac = r.wheelbase_frac + uniform(-0.015, 0.015);
    p.belt_frac = r.belt_frac + uniform(-0.015, 0.015);
    p.wheel_radius = r.wheel_radius + uniform(-0.01, 0.01);
    return p;
}

inline std::vector<ShapeVector> make_synthetic_fleet(int count, std::uint64_t seed) {
    if (count < 1) throw PreconditionError("make_synthetic_fleet: count must be positive");
    Rng rng(derive_seed(seed, 0x5f1e7));
    std::vector<ShapeVector> fleet;
    fleet.reserve(static_cast<std::size_t>(count));
    const auto& cats = fleet_categories();
    for (int i = 0; i < count; ++i) {
        const auto& cat = cats[static_cast<std::size_t>(i) % cats.size()];
        fleet.push_back(make_body_shape(sample_body_params(cat, rng), cat));
    }
    return fleet;
}

}  // namespace skytrack
