#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sgs/grid.hpp"
#include "sgs/scene.hpp"

namespace sgs {

struct RenderSettings {
    double low_pass = 0.3;             // px^2 added to every screen-space covariance
    double near_plane = 0.01;
    double smoothing_scale = 0.2;      // 3D smoothing filter scale, 0 disables it
    double min_transmittance = 1e-4;
    double support_sigmas = 3.0;
    int tile_size = 16;
};

struct ProjectedGaussian {
    std::size_t index = 0;             // position in the source cloud
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Vec3 conic = Vec3(1.0, 0.0, 1.0);  // inverse of cov2d as (a, b, c)
    double view_depth = 1.0;
    Vec3 rgb = Vec3::Zero();
    double opacity = 0.0;

    /// Builds a splat from a screen covariance, filling in the conic.
    static ProjectedGaussian from_covariance(std::size_t index, const Vec2& mean, const Mat2& cov,
                                             double depth, const Vec3& rgb, double opacity);
};

struct RenderOutput {
    ImageBuffer color;
    DepthMap depth;
    Grid<double> alpha;
    bool all_culled = false;
    std::size_t contributions = 0;     // evaluated (pixel, primitive) pairs
};

/// Per-primitive parameter gradients in the cloud's storage layout.
struct CloudGradients {
    std::vector<double> position;      // 3 per primitive
    std::vector<double> rotation;      // 4 per primitive (w, x, y, z)
    std::vector<double> log_scale;     // 3 per primitive
    std::vector<double> opacity;       // 1 per primitive (logit space)
    std::vector<double> sh;            // 3 * K per primitive

    CloudGradients() = default;
    CloudGradients(std::size_t count, int coeffs_per_channel);
    bool all_finite() const;
};

/// Sigma + (scale * depth / focal)^2 I.
Mat3 apply_3d_smoothing_filter(const Mat3& cov, double view_depth, double focal, double filter_scale);

/// Perspective (EWA) projection of one primitive. Returns nullopt when the
/// primitive lies at or in front of the near plane.
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& primitive, int sh_degree,
                                                  const Camera& camera, const RenderSettings& settings = {});

/// Front-to-back alpha compositing of already projected splats.
RenderOutput composite(std::span<const ProjectedGaussian> splats, int width, int height,
                       const RenderSettings& settings = {});

RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const RenderSettings& settings = {});

/// Gradients of a scalar loss given d(loss)/d(color) and d(loss)/d(depth)
/// images. Colour gradients are ignored where the output was clamped.
CloudGradients render_backward(const GaussianCloud& cloud, const Camera& camera, const ImageBuffer& grad_color,
                               const DepthMap& grad_depth, const RenderSettings& settings = {});

}  // namespace sgs
