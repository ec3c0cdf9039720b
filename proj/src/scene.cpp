#include "sgs/scene.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include "sgs/error.hpp"

namespace sgs {

namespace {

bool finite(const auto& m) { return m.allFinite(); }

constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

double GaussianPrimitive::opacity() const { return sigmoid(opacity_logit); }

Vec3 GaussianPrimitive::scales() const { return log_scales.array().exp(); }

void GaussianCloud::validate() const {
    require(sh_degree >= 0 && sh_degree <= kMaxShDegree, ErrorCode::InvalidParameter,
            "sh_degree must be in [0, 3]");
    const std::size_t expected = 3 * static_cast<std::size_t>(coeffs_per_channel());
    for (std::size_t i = 0; i < primitives.size(); ++i) {
        require(primitives[i].sh.size() == expected, ErrorCode::InvalidParameter,
                "primitive " + std::to_string(i) + " has " + std::to_string(primitives[i].sh.size()) +
                    " SH coefficients, expected " + std::to_string(expected));
    }
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.rotation * translation;
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    RigidTransform out;
    out.rotation = rotation * inner.rotation;
    out.translation = rotation * inner.translation + translation;
    return out;
}

Camera Camera::centered(double focal, int width, int height, const RigidTransform& pose) {
    Camera cam;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.principal_point = Vec2(width / 2.0, height / 2.0);
    cam.pose = pose;
    return cam;
}

Camera Camera::look_at(double focal, int width, int height, const Vec3& eye, const Vec3& target,
                       const Vec3& up) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    RigidTransform pose;
    pose.rotation.row(0) = right.transpose();
    pose.rotation.row(1) = down.transpose();
    pose.rotation.row(2) = forward.transpose();
    pose.translation = -pose.rotation * eye;
    return centered(focal, width, height, pose);
}

void Camera::validate() const {
    require(std::isfinite(focal) && focal > 0.0, ErrorCode::InvalidParameter, "camera focal must be > 0");
    require(width >= 1 && height >= 1, ErrorCode::InvalidParameter, "camera resolution must be >= 1");
    require(finite(principal_point) && finite(pose.rotation) && finite(pose.translation),
            ErrorCode::InvalidParameter, "camera parameters must be finite");
    const double orth = (pose.rotation * pose.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(orth < 1e-6 && pose.rotation.determinant() > 0.0, ErrorCode::InvalidParameter,
            "camera rotation must be orthonormal with determinant +1");
}

void PointMap::validate() const {
    require(points.same_shape(confidence), ErrorCode::InvalidParameter,
            "point map and confidence dimensions differ");
    require(!colors || colors->same_shape(points), ErrorCode::InvalidParameter,
            "point map colour dimensions differ");
    for (double w : confidence.values) {
        require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidParameter, "confidence must be finite and >= 0");
    }
}

bool ConnectivityGraph::connected() const {
    if (view_count <= 0) return false;
    std::vector<int> parent(view_count);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    int components = view_count;
    for (const auto& e : edges) {
        if (e.first < 0 || e.second < 0 || e.first >= view_count || e.second >= view_count) continue;
        const int a = find(e.first);
        const int b = find(e.second);
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components == 1;
}

void ConnectivityGraph::validate() const {
    require(view_count >= 1, ErrorCode::InvalidGraph, "graph has no views");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto& e = edges[i];
        const std::string id = "edge " + std::to_string(i);
        require(e.first >= 0 && e.first < view_count && e.second >= 0 && e.second < view_count,
                ErrorCode::InvalidGraph, id + " references an unknown view");
        require(e.first != e.second, ErrorCode::InvalidGraph, id + " is a self edge");
        e.first_map.validate();
        e.second_map.validate();
    }
    require(connected(), ErrorCode::InvalidGraph, "connectivity graph is not connected");
    require(view_maps.empty() || static_cast<int>(view_maps.size()) == view_count, ErrorCode::InvalidGraph,
            "per-view point map count differs from view count");
}

Vec4 normalized_quaternion(const Vec4& q) {
    const double n = q.norm();
    require(std::isfinite(n) && n > 0.0, ErrorCode::InvalidParameter, "quaternion must be finite and non-zero");
    return q / n;
}

Mat3 rotation_from_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
         2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
         2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Vec4 quaternion_from_rotation(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) out = -out;
    return out;
}

Vec4 quaternion_gradient(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y,
          2 * z, 0, -2 * x,
          -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z,
          2 * y, -4 * x, -2 * w,
          2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w,
          2 * x, 0, 2 * z,
          -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x,
          2 * w, -4 * z, 2 * y,
          2 * x, 2 * y, 0;
    return Vec4(g.cwiseProduct(dw).sum(), g.cwiseProduct(dx).sum(), g.cwiseProduct(dy).sum(),
                g.cwiseProduct(dz).sum());
}

Vec4 normalization_gradient(const Vec4& raw_q, const Vec4& d_unit) {
    const double n = raw_q.norm();
    const Vec4 u = raw_q / n;
    return (d_unit - u * u.dot(d_unit)) / n;
}

Mat3 covariance_from_params(const Vec4& rotation, const Vec3& log_scales) {
    require(finite(rotation) && finite(log_scales), ErrorCode::InvalidParameter,
            "covariance parameters must be finite");
    require(std::abs(rotation.norm() - 1.0) <= 1e-6, ErrorCode::InvalidParameter,
            "covariance rotation must be a unit quaternion");
    const Mat3 r = rotation_from_quaternion(rotation);
    const Mat3 m = r * log_scales.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

double evaluate_gaussian(const GaussianPrimitive& primitive, const Vec3& p) {
    require(finite(p) && finite(primitive.position), ErrorCode::InvalidParameter,
            "gaussian evaluation inputs must be finite");
    const Mat3 cov = covariance_from_params(normalized_quaternion(primitive.rotation), primitive.log_scales);
    const Vec3 d = p - primitive.position;
    const double mahalanobis = d.dot(cov.ldlt().solve(d));
    return std::exp(-0.5 * mahalanobis);
}

void sh_basis(int degree, const Vec3& dir, std::span<double> out) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = kShC0;
    if (degree < 1) return;
    out[1] = -kShC1 * y;
    out[2] = kShC1 * z;
    out[3] = -kShC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kShC2[0] * x * y;
    out[5] = kShC2[1] * y * z;
    out[6] = kShC2[2] * (2.0 * zz - xx - yy);
    out[7] = kShC2[3] * x * z;
    out[8] = kShC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kShC3[0] * y * (3.0 * xx - yy);
    out[10] = kShC3[1] * x * y * z;
    out[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kShC3[5] * z * (xx - yy);
    out[15] = kShC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_with_gradient(int degree, const Vec3& dir, std::span<double> out, std::span<Vec3> grad) {
    sh_basis(degree, dir, out);
    const double x = dir.x(), y = dir.y(), z = dir.z();
    grad[0].setZero();
    if (degree < 1) return;
    grad[1] = Vec3(0.0, -kShC1, 0.0);
    grad[2] = Vec3(0.0, 0.0, kShC1);
    grad[3] = Vec3(-kShC1, 0.0, 0.0);
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    grad[4] = kShC2[0] * Vec3(y, x, 0.0);
    grad[5] = kShC2[1] * Vec3(0.0, z, y);
    grad[6] = kShC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    grad[7] = kShC2[3] * Vec3(z, 0.0, x);
    grad[8] = kShC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    if (degree < 3) return;
    grad[9] = kShC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    grad[10] = kShC3[1] * Vec3(y * z, x * z, x * y);
    grad[11] = kShC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    grad[12] = kShC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    grad[13] = kShC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    grad[14] = kShC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
    grad[15] = kShC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

Vec3 sh_to_color(std::span<const double> coeffs, int degree, const Vec3& view_direction) {
    require(degree >= 0 && degree <= kMaxShDegree, ErrorCode::InvalidParameter, "sh degree must be in [0, 3]");
    const int k = sh_coeff_count(degree);
    require(coeffs.size() == static_cast<std::size_t>(3 * k), ErrorCode::InvalidParameter,
            "SH coefficient count does not match degree");
    double basis[16];
    sh_basis(degree, view_direction, std::span<double>(basis, k));
    Vec3 rgb = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < k; ++i) rgb[c] += coeffs[c * k + i] * basis[i];
    }
    return rgb;
}

}  // namespace sgs
