#include "sgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "sgs/error.hpp"
#include "sgs/parallel.hpp"

namespace sgs {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

struct ProjectionDetail {
    bool visible = false;
    ProjectedGaussian splat;
    Vec3 cam = Vec3::Zero();
    Vec4 unit_q = Vec4(1, 0, 0, 0);
    Mat3 rotation = Mat3::Identity();
    Vec3 scales = Vec3::Ones();
    Mat3 cov_filtered = Mat3::Identity();
    Mat23 jw = Mat23::Zero();
    Vec3 view_dir = Vec3::UnitZ();
    double view_dist = 1.0;
};

ProjectionDetail project_detail(const GaussianPrimitive& prim, std::size_t index, int degree, const Camera& camera,
                                const RenderSettings& settings) {
    ProjectionDetail d;
    d.cam = camera.pose.apply(prim.position);
    if (!(d.cam.z() > settings.near_plane)) return d;
    d.visible = true;

    const double f = camera.focal;
    const double x = d.cam.x(), y = d.cam.y(), z = d.cam.z();
    d.unit_q = normalized_quaternion(prim.rotation);
    d.rotation = rotation_from_quaternion(d.unit_q);
    d.scales = prim.scales();
    const Mat3 m = d.rotation * d.scales.asDiagonal();
    d.cov_filtered = apply_3d_smoothing_filter(m * m.transpose(), z, f, settings.smoothing_scale);

    Mat23 jac;
    jac << f / z, 0.0, -f * x / (z * z),
           0.0, f / z, -f * y / (z * z);
    d.jw = jac * camera.pose.rotation;
    const Mat2 cov2d = d.jw * d.cov_filtered * d.jw.transpose() + settings.low_pass * Mat2::Identity();

    const Vec3 offset = prim.position - camera.center();
    d.view_dist = offset.norm();
    d.view_dir = offset / d.view_dist;

    const Vec2 mean(f * x / z + camera.principal_point.x(), f * y / z + camera.principal_point.y());
    d.splat = ProjectedGaussian::from_covariance(index, mean, cov2d, z, sh_to_color(prim.sh, degree, d.view_dir),
                                                 prim.opacity());
    return d;
}

bool front_to_back(const ProjectedGaussian& a, const ProjectedGaussian& b) {
    if (a.view_depth != b.view_depth) return a.view_depth < b.view_depth;
    return a.index < b.index;
}

// q = d^T conic d for pixel offset d = pixel - mean.
inline double mahalanobis2(const ProjectedGaussian& g, double dx, double dy) {
    return g.conic.x() * dx * dx + 2.0 * g.conic.y() * dx * dy + g.conic.z() * dy * dy;
}

struct TileGrid {
    int size = 16;
    int cols = 0;
    int rows = 0;
    std::vector<std::vector<std::uint32_t>> lists;  // indices into the sorted splat array

    std::size_t count() const { return lists.size(); }
};

TileGrid bin_splats(std::span<const ProjectedGaussian> sorted, int width, int height, const RenderSettings& s) {
    TileGrid grid;
    grid.size = std::max(1, s.tile_size);
    grid.cols = (width + grid.size - 1) / grid.size;
    grid.rows = (height + grid.size - 1) / grid.size;
    grid.lists.resize(static_cast<std::size_t>(grid.cols) * grid.rows);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& g = sorted[i];
        // Exact bounding box of the support ellipse, padded against rounding.
        const double rx = s.support_sigmas * std::sqrt(g.cov2d(0, 0)) + 1e-6;
        const double ry = s.support_sigmas * std::sqrt(g.cov2d(1, 1)) + 1e-6;
        const double x0 = std::max(0.0, std::ceil(g.mean2d.x() - rx));
        const double x1 = std::min(width - 1.0, std::floor(g.mean2d.x() + rx));
        const double y0 = std::max(0.0, std::ceil(g.mean2d.y() - ry));
        const double y1 = std::min(height - 1.0, std::floor(g.mean2d.y() + ry));
        if (x0 > x1 || y0 > y1) continue;
        const int tx0 = static_cast<int>(x0) / grid.size, tx1 = static_cast<int>(x1) / grid.size;
        const int ty0 = static_cast<int>(y0) / grid.size, ty1 = static_cast<int>(y1) / grid.size;
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                grid.lists[static_cast<std::size_t>(ty) * grid.cols + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }
    return grid;
}

template <typename Body>
void for_each_tile_pixel(const TileGrid& grid, std::size_t tile, int width, int height, Body&& body) {
    const int tx = static_cast<int>(tile % grid.cols);
    const int ty = static_cast<int>(tile / grid.cols);
    const int xe = std::min(width, (tx + 1) * grid.size);
    const int ye = std::min(height, (ty + 1) * grid.size);
    for (int y = ty * grid.size; y < ye; ++y) {
        for (int x = tx * grid.size; x < xe; ++x) body(x, y);
    }
}

RenderOutput composite_sorted(std::span<const ProjectedGaussian> sorted, int width, int height,
                              const RenderSettings& s) {
    RenderOutput out;
    out.color = make_image(width, height);
    out.depth = DepthMap(width, height, 0.0);
    out.alpha = Grid<double>(width, height, 0.0);
    out.all_culled = sorted.empty();

    const TileGrid grid = bin_splats(sorted, width, height, s);
    const double cutoff = s.support_sigmas * s.support_sigmas;
    std::vector<std::size_t> tile_contributions(grid.count(), 0);

    parallel_for(grid.count(), [&](std::size_t tile) {
        const auto& list = grid.lists[tile];
        std::size_t evaluated = 0;
        for_each_tile_pixel(grid, tile, width, height, [&](int x, int y) {
            double transmittance = 1.0;
            Vec3 color = Vec3::Zero();
            double depth = 0.0;
            for (std::uint32_t idx : list) {
                if (transmittance < s.min_transmittance) break;
                const auto& g = sorted[idx];
                const double dx = x - g.mean2d.x();
                const double dy = y - g.mean2d.y();
                const double q = mahalanobis2(g, dx, dy);
                if (q > cutoff) continue;
                ++evaluated;
                const double sigma = g.opacity * std::exp(-0.5 * q);
                color += g.rgb * (sigma * transmittance);
                depth += g.view_depth * (sigma * transmittance);
                transmittance *= 1.0 - sigma;
            }
            out.color.at(x, y) = color.cwiseMax(0.0).cwiseMin(1.0);
            out.depth.at(x, y) = depth;
            out.alpha.at(x, y) = 1.0 - transmittance;
        });
        tile_contributions[tile] = evaluated;
    });
    for (std::size_t c : tile_contributions) out.contributions += c;
    return out;
}

void check_render_inputs(const GaussianCloud& cloud, const Camera& camera) {
    require(!cloud.empty(), ErrorCode::InvalidParameter, "cannot render an empty cloud");
    cloud.validate();
    camera.validate();
}

struct SplatGradient {
    Vec2 mean = Vec2::Zero();
    Vec3 conic = Vec3::Zero();
    Vec3 rgb = Vec3::Zero();
    double opacity = 0.0;
    double depth = 0.0;

    SplatGradient& operator+=(const SplatGradient& o) {
        mean += o.mean;
        conic += o.conic;
        rgb += o.rgb;
        opacity += o.opacity;
        depth += o.depth;
        return *this;
    }
};

}  // namespace

ProjectedGaussian ProjectedGaussian::from_covariance(std::size_t index, const Vec2& mean, const Mat2& cov,
                                                     double depth, const Vec3& rgb, double opacity) {
    ProjectedGaussian g;
    g.index = index;
    g.mean2d = mean;
    g.cov2d = cov;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    require(det > 0.0 && std::isfinite(det), ErrorCode::InvalidParameter, "screen covariance is not positive definite");
    g.conic = Vec3(cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det);
    g.view_depth = depth;
    g.rgb = rgb;
    g.opacity = opacity;
    return g;
}

CloudGradients::CloudGradients(std::size_t count, int coeffs_per_channel)
    : position(3 * count, 0.0),
      rotation(4 * count, 0.0),
      log_scale(3 * count, 0.0),
      opacity(count, 0.0),
      sh(3 * static_cast<std::size_t>(coeffs_per_channel) * count, 0.0) {}

bool CloudGradients::all_finite() const {
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(position) && ok(rotation) && ok(log_scale) && ok(opacity) && ok(sh);
}

Mat3 apply_3d_smoothing_filter(const Mat3& cov, double view_depth, double focal, double filter_scale) {
    const double r = filter_scale * view_depth / focal;
    return cov + (r * r) * Mat3::Identity();
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& primitive, int sh_degree,
                                                  const Camera& camera, const RenderSettings& settings) {
    auto detail = project_detail(primitive, 0, sh_degree, camera, settings);
    if (!detail.visible) return std::nullopt;
    return detail.splat;
}

RenderOutput composite(std::span<const ProjectedGaussian> splats, int width, int height,
                       const RenderSettings& settings) {
    require(width >= 1 && height >= 1, ErrorCode::InvalidParameter, "render target must be at least 1x1");
    std::vector<ProjectedGaussian> sorted(splats.begin(), splats.end());
    std::sort(sorted.begin(), sorted.end(), front_to_back);
    return composite_sorted(sorted, width, height, settings);
}

RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const RenderSettings& settings) {
    check_render_inputs(cloud, camera);
    std::vector<ProjectionDetail> details(cloud.size());
    parallel_for(cloud.size(), [&](std::size_t i) {
        details[i] = project_detail(cloud.primitives[i], i, cloud.sh_degree, camera, settings);
    });
    std::vector<ProjectedGaussian> sorted;
    sorted.reserve(cloud.size());
    for (const auto& d : details) {
        if (d.visible) sorted.push_back(d.splat);
    }
    std::sort(sorted.begin(), sorted.end(), front_to_back);
    return composite_sorted(sorted, camera.width, camera.height, settings);
}

CloudGradients render_backward(const GaussianCloud& cloud, const Camera& camera, const ImageBuffer& grad_color,
                               const DepthMap& grad_depth, const RenderSettings& settings) {
    check_render_inputs(cloud, camera);
    require(grad_color.width == camera.width && grad_color.height == camera.height &&
                grad_depth.width == camera.width && grad_depth.height == camera.height,
            ErrorCode::InvalidParameter, "upstream gradient dimensions do not match the camera");

    const int width = camera.width;
    const int height = camera.height;
    const int degree = cloud.sh_degree;
    const int k = cloud.coeffs_per_channel();

    std::vector<ProjectionDetail> details(cloud.size());
    parallel_for(cloud.size(), [&](std::size_t i) {
        details[i] = project_detail(cloud.primitives[i], i, degree, camera, settings);
    });
    std::vector<ProjectedGaussian> sorted;
    for (const auto& d : details) {
        if (d.visible) sorted.push_back(d.splat);
    }
    std::sort(sorted.begin(), sorted.end(), front_to_back);
    const TileGrid grid = bin_splats(sorted, width, height, settings);
    const double cutoff = settings.support_sigmas * settings.support_sigmas;

    // Screen-space gradients, accumulated per tile and reduced in tile order.
    std::vector<std::vector<SplatGradient>> tile_grads(grid.count());
    parallel_for(grid.count(), [&](std::size_t tile) {
        const auto& list = grid.lists[tile];
        auto& local = tile_grads[tile];
        local.assign(list.size(), SplatGradient{});
        struct Hit {
            std::uint32_t slot;
            double sigma;
            double gauss;
            double transmittance;
            double dx;
            double dy;
        };
        std::vector<Hit> hits;
        for_each_tile_pixel(grid, tile, width, height, [&](int x, int y) {
            hits.clear();
            double transmittance = 1.0;
            Vec3 color = Vec3::Zero();
            for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
                if (transmittance < settings.min_transmittance) break;
                const auto& g = sorted[list[slot]];
                const double dx = x - g.mean2d.x();
                const double dy = y - g.mean2d.y();
                const double q = mahalanobis2(g, dx, dy);
                if (q > cutoff) continue;
                const double gauss = std::exp(-0.5 * q);
                const double sigma = g.opacity * gauss;
                hits.push_back({slot, sigma, gauss, transmittance, dx, dy});
                color += g.rgb * (sigma * transmittance);
                transmittance *= 1.0 - sigma;
            }
            if (hits.empty()) return;

            Vec3 up_color = grad_color.at(x, y);
            for (int c = 0; c < 3; ++c) {
                if (color[c] < 0.0 || color[c] > 1.0) up_color[c] = 0.0;
            }
            const double up_depth = grad_depth.at(x, y);

            Vec3 behind_color = Vec3::Zero();
            double behind_depth = 0.0;
            for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                const auto& g = sorted[list[it->slot]];
                auto& acc = local[it->slot];
                const double weight = it->sigma * it->transmittance;
                acc.rgb += weight * up_color;
                acc.depth += weight * up_depth;

                const double d_sigma = it->transmittance * (up_color.dot(g.rgb - behind_color) +
                                                            up_depth * (g.view_depth - behind_depth));
                acc.opacity += it->gauss * d_sigma;
                const double d_q = -0.5 * g.opacity * it->gauss * d_sigma;
                acc.conic += d_q * Vec3(it->dx * it->dx, 2.0 * it->dx * it->dy, it->dy * it->dy);
                acc.mean -= d_q * Vec2(2.0 * (g.conic.x() * it->dx + g.conic.y() * it->dy),
                                       2.0 * (g.conic.y() * it->dx + g.conic.z() * it->dy));

                behind_color = g.rgb * it->sigma + (1.0 - it->sigma) * behind_color;
                behind_depth = g.view_depth * it->sigma + (1.0 - it->sigma) * behind_depth;
            }
        });
    });

    std::vector<SplatGradient> screen(sorted.size());
    for (std::size_t tile = 0; tile < grid.count(); ++tile) {
        const auto& list = grid.lists[tile];
        for (std::size_t slot = 0; slot < list.size(); ++slot) screen[list[slot]] += tile_grads[tile][slot];
    }

    CloudGradients grads(cloud.size(), k);
    const double f = camera.focal;
    const Mat3& view_rot = camera.pose.rotation;
    const double filter = settings.smoothing_scale / f;

    parallel_for(sorted.size(), [&](std::size_t s) {
        const std::size_t i = sorted[s].index;
        const auto& d = details[i];
        const auto& g = d.splat;
        const auto& sg = screen[s];
        const auto& prim = cloud.primitives[i];

        // Colour through the SH basis.
        double basis[16];
        Vec3 basis_grad[16];
        sh_basis_with_gradient(degree, d.view_dir, std::span<double>(basis, k), std::span<Vec3>(basis_grad, k));
        Vec3 d_dir = Vec3::Zero();
        for (int c = 0; c < 3; ++c) {
            for (int j = 0; j < k; ++j) {
                grads.sh[i * 3 * k + c * k + j] = sg.rgb[c] * basis[j];
                d_dir += sg.rgb[c] * prim.sh[c * k + j] * basis_grad[j];
            }
        }
        Vec3 d_position = (d_dir - d.view_dir * d.view_dir.dot(d_dir)) / d.view_dist;

        const double alpha = g.opacity;
        grads.opacity[i] = sg.opacity * alpha * (1.0 - alpha);

        // conic -> cov2d
        const Mat2 conic_m = (Mat2() << g.conic.x(), g.conic.y(), g.conic.y(), g.conic.z()).finished();
        const Mat2 d_conic_m = (Mat2() << sg.conic.x(), 0.5 * sg.conic.y(), 0.5 * sg.conic.y(), sg.conic.z()).finished();
        const Mat2 d_cov2d = -conic_m * d_conic_m * conic_m;

        // cov2d = (J W) Sigma_f (J W)^T + lp I
        const Mat3 d_cov_filtered = d.jw.transpose() * d_cov2d * d.jw;
        const Mat23 d_jw = 2.0 * d_cov2d * d.jw * d.cov_filtered;
        const Mat23 d_jac = d_jw * view_rot.transpose();

        const double x = d.cam.x(), y = d.cam.y(), z = d.cam.z();
        const double z2 = z * z, z3 = z2 * z;
        Vec3 d_cam = Vec3::Zero();
        d_cam.x() += d_jac(0, 2) * (-f / z2);
        d_cam.y() += d_jac(1, 2) * (-f / z2);
        d_cam.z() += (d_jac(0, 0) + d_jac(1, 1)) * (-f / z2) + d_jac(0, 2) * (2.0 * f * x / z3) +
                     d_jac(1, 2) * (2.0 * f * y / z3);
        d_cam.z() += 2.0 * filter * filter * z * d_cov_filtered.trace();
        d_cam.x() += sg.mean.x() * f / z;
        d_cam.y() += sg.mean.y() * f / z;
        d_cam.z() += -sg.mean.x() * f * x / z2 - sg.mean.y() * f * y / z2;
        d_cam.z() += sg.depth;
        d_position += view_rot.transpose() * d_cam;
        for (int c = 0; c < 3; ++c) grads.position[3 * i + c] = d_position[c];

        // Sigma = M M^T with M = R S
        const Mat3 m = d.rotation * d.scales.asDiagonal();
        const Mat3 d_m = 2.0 * d_cov_filtered * m;
        const Mat3 rt_dm = d.rotation.transpose() * d_m;
        for (int c = 0; c < 3; ++c) grads.log_scale[3 * i + c] = rt_dm(c, c) * d.scales[c];
        const Mat3 d_rot = d_m * d.scales.asDiagonal();
        const Vec4 d_q = normalization_gradient(prim.rotation, quaternion_gradient(d.unit_q, d_rot));
        for (int c = 0; c < 4; ++c) grads.rotation[4 * i + c] = d_q[c];
    });
    return grads;
}

}  // namespace sgs
