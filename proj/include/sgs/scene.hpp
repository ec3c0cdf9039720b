#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "sgs/grid.hpp"

namespace sgs {

constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One anisotropic 3D Gaussian in unconstrained (pre-activation) parameters.
///
/// The covariance is carried as a quaternion (w, x, y, z) plus per-axis log
/// standard deviations, giving Sigma = R diag(exp(s))^2 R^T. Opacity is the
/// sigmoid of `opacity_logit`. Colour coefficients are stored channel-major:
/// `sh[c * K + k]` is coefficient k of channel c, with K = sh_coeff_count(degree).
struct GaussianPrimitive {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    Vec3 log_scales = Vec3::Zero();
    double opacity_logit = 0.0;
    std::vector<double> sh;

    double opacity() const;
    Vec3 scales() const;
};

struct GaussianCloud {
    int sh_degree = 1;
    std::vector<GaussianPrimitive> primitives;

    std::size_t size() const { return primitives.size(); }
    bool empty() const { return primitives.empty(); }
    int coeffs_per_channel() const { return sh_coeff_count(sh_degree); }

    /// Throws InvalidParameter when the SH layout of any primitive is inconsistent.
    void validate() const;
};

/// Rigid world-to-camera transform: p_cam = rotation * p_world + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
    RigidTransform compose(const RigidTransform& inner) const;  // this * inner
};

/// Pinhole camera looking along +z with x right and y down. Pixel (x, y) has
/// its centre at integer coordinates, so a point on the optical axis lands on
/// (cx, cy), which defaults to (W/2, H/2).
struct Camera {
    double focal = 1.0;
    Vec2 principal_point = Vec2::Zero();
    int width = 1;
    int height = 1;
    RigidTransform pose;

    static Camera centered(double focal, int width, int height, const RigidTransform& pose = {});
    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    static Camera look_at(double focal, int width, int height, const Vec3& eye, const Vec3& target,
                          const Vec3& up = Vec3::UnitY());

    Vec3 center() const { return -pose.rotation.transpose() * pose.translation; }
    void validate() const;
};

struct PointMap {
    Grid<Vec3> points;
    Grid<double> confidence;
    std::optional<ImageBuffer> colors;

    int width() const { return points.width; }
    int height() const { return points.height; }
    void validate() const;
};

/// Pairwise point maps for one image pair. Both maps are expressed in the
/// frame of the first view, as produced by a two-view stereo network.
struct GraphEdge {
    int first = 0;
    int second = 0;
    PointMap first_map;
    PointMap second_map;

    const PointMap& map_for(int view) const { return view == first ? first_map : second_map; }
};

struct ConnectivityGraph {
    int view_count = 0;
    std::vector<GraphEdge> edges;
    /// Optional per-view point maps in each camera's own frame; used to read
    /// camera poses for views that never lead an edge.
    std::vector<PointMap> view_maps;

    bool connected() const;
    /// Throws InvalidGraph on self edges, out-of-range views or disconnection.
    void validate() const;
};

// Quaternions are (w, x, y, z).
Vec4 normalized_quaternion(const Vec4& q);
Mat3 rotation_from_quaternion(const Vec4& unit_q);
Vec4 quaternion_from_rotation(const Mat3& r);
/// Chain rule through R(q) for a unit quaternion: returns dL/dq given dL/dR.
Vec4 quaternion_gradient(const Vec4& unit_q, const Mat3& d_rotation);
/// Chain rule through q / |q|.
Vec4 normalization_gradient(const Vec4& raw_q, const Vec4& d_unit_q);

Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scales);

/// exp(-1/2 (p - mu)^T Sigma^-1 (p - mu)) for the primitive's 3D covariance.
double evaluate_gaussian(const GaussianPrimitive& primitive, const Vec3& p);

/// Real SH basis values up to `degree` for a unit direction.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);
/// Basis values and their derivatives with respect to the direction components.
void sh_basis_with_gradient(int degree, const Vec3& dir, std::span<double> out, std::span<Vec3> grad);

Vec3 sh_to_color(std::span<const double> coeffs, int degree, const Vec3& view_direction);

inline constexpr double kShC0 = 0.28209479177387814;

double sigmoid(double x);
double logit(double p);

}  // namespace sgs
