#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace skytrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A stated precondition of an operation does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Input file or record cannot be parsed or fails schema validation.
class ParseError : public Error {
public:
    using Error::Error;
};

// A numerical solver failed (rank deficiency, non-convergence, ...).
class SolverError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Normalizes an angle to [-pi, pi).
inline double wrap_angle(double a) {
    double w = a - 2.0 * kPi * std::floor((a + kPi) / (2.0 * kPi));
    if (w >= kPi) w -= 2.0 * kPi;  // guards against floor rounding at the seam
    return w;
}

// Wrapped difference a - b in (-pi, pi]. Used for heading residuals.
inline double angle_diff(double a, double b) {
    double d = std::remainder(a - b, 2.0 * kPi);
    if (d <= -kPi) d += 2.0 * kPi;
    return d;
}

// Rotation about the z-axis by psi.
inline Mat3 rot_z(double psi) {
    const double c = std::cos(psi), s = std::sin(psi);
    Mat3 r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

// d/dpsi of rot_z(psi).
inline Mat3 rot_z_derivative(double psi) {
    const double c = std::cos(psi), s = std::sin(psi);
    Mat3 r;
    r << -s, -c, 0, c, -s, 0, 0, 0, 0;
    return r;
}

using Rng = std::mt19937_64;

// splitmix64; decorrelates per-module RNG streams derived from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace skytrack
