#pragma once

// Test-only helpers: random scene generators, a naive reference compositor and
// central finite differences. Nothing here calls into the tiled renderer.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sgs/rasterizer.hpp"
#include "sgs/scene.hpp"

namespace sgs::testing {

inline Vec4 random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

inline GaussianPrimitive random_primitive(std::mt19937_64& rng, int sh_degree, const Vec3& lo, const Vec3& hi,
                                          double log_scale_lo, double log_scale_hi, double opacity_lo,
                                          double opacity_hi) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GaussianPrimitive p;
    for (int c = 0; c < 3; ++c) p.position[c] = lo[c] + (hi[c] - lo[c]) * u(rng);
    p.rotation = random_unit_quaternion(rng);
    for (int c = 0; c < 3; ++c) p.log_scales[c] = log_scale_lo + (log_scale_hi - log_scale_lo) * u(rng);
    p.opacity_logit = logit(opacity_lo + (opacity_hi - opacity_lo) * u(rng));
    const int k = sh_coeff_count(sh_degree);
    p.sh.assign(3 * k, 0.0);
    for (int c = 0; c < 3; ++c) {
        p.sh[c * k] = (0.2 + 0.6 * u(rng)) / kShC0;
        for (int j = 1; j < k; ++j) p.sh[c * k + j] = 0.1 * (u(rng) - 0.5);
    }
    return p;
}

/// Brute-force compositor: every pixel visits every splat in depth order.
inline RenderOutput reference_composite(std::vector<ProjectedGaussian> splats, int width, int height,
                                        const RenderSettings& s) {
    std::stable_sort(splats.begin(), splats.end(), [](const auto& a, const auto& b) {
        return a.view_depth < b.view_depth || (a.view_depth == b.view_depth && a.index < b.index);
    });
    RenderOutput out;
    out.color = make_image(width, height);
    out.depth = DepthMap(width, height, 0.0);
    out.alpha = Grid<double>(width, height, 0.0);
    const double cutoff = s.support_sigmas * s.support_sigmas;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            double d = 0.0;
            for (const auto& g : splats) {
                if (t < s.min_transmittance) break;
                const double dx = x - g.mean2d.x();
                const double dy = y - g.mean2d.y();
                const double q = g.conic.x() * dx * dx + 2.0 * g.conic.y() * dx * dy + g.conic.z() * dy * dy;
                if (q > cutoff) continue;
                const double sigma = g.opacity * std::exp(-0.5 * q);
                c += g.rgb * (sigma * t);
                d += g.view_depth * (sigma * t);
                t *= 1.0 - sigma;
            }
            out.color.at(x, y) = c.cwiseMax(0.0).cwiseMin(1.0);
            out.depth.at(x, y) = d;
            out.alpha.at(x, y) = 1.0 - t;
        }
    }
    return out;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Loss = sum of weighted colour and depth; its upstream gradients are the weights.
struct LinearLoss {
    ImageBuffer color_weights;
    DepthMap depth_weights;

    static LinearLoss random(std::mt19937_64& rng, int w, int h, double depth_scale = 1.0) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        LinearLoss l{make_image(w, h), DepthMap(w, h, 0.0)};
        for (auto& v : l.color_weights.values) v = Vec3(u(rng), u(rng), u(rng));
        for (auto& v : l.depth_weights.values) v = depth_scale * u(rng);
        return l;
    }

    double operator()(const RenderOutput& r) const {
        double total = 0.0;
        for (std::size_t i = 0; i < r.color.size(); ++i) {
            total += color_weights[i].dot(r.color[i]) + depth_weights[i] * r.depth[i];
        }
        return total;
    }
};

inline bool gradient_close(double analytic, double numeric, double rel, double abs_tol) {
    const double err = std::abs(analytic - numeric);
    return err <= abs_tol || err <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace sgs::testing

namespace sgs::testing {

enum class Group { Position, Rotation, LogScale, Opacity, Sh };

struct ParamRef {
    std::size_t primitive;
    Group group;
    int component;
};

inline std::vector<ParamRef> all_params(const GaussianCloud& cloud) {
    std::vector<ParamRef> refs;
    const int sh = 3 * cloud.coeffs_per_channel();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) refs.push_back({i, Group::Position, c});
        for (int c = 0; c < 4; ++c) refs.push_back({i, Group::Rotation, c});
        for (int c = 0; c < 3; ++c) refs.push_back({i, Group::LogScale, c});
        refs.push_back({i, Group::Opacity, 0});
        for (int c = 0; c < sh; ++c) refs.push_back({i, Group::Sh, c});
    }
    return refs;
}

inline double& param(GaussianCloud& cloud, const ParamRef& r) {
    auto& p = cloud.primitives[r.primitive];
    switch (r.group) {
        case Group::Position: return p.position[r.component];
        case Group::Rotation: return p.rotation[r.component];
        case Group::LogScale: return p.log_scales[r.component];
        case Group::Opacity: return p.opacity_logit;
        case Group::Sh: return p.sh[r.component];
    }
    return p.opacity_logit;
}

inline double gradient(const CloudGradients& g, const GaussianCloud& cloud, const ParamRef& r) {
    const std::size_t i = r.primitive;
    switch (r.group) {
        case Group::Position: return g.position[3 * i + r.component];
        case Group::Rotation: return g.rotation[4 * i + r.component];
        case Group::LogScale: return g.log_scale[3 * i + r.component];
        case Group::Opacity: return g.opacity[i];
        case Group::Sh: return g.sh[i * 3 * cloud.coeffs_per_channel() + r.component];
    }
    return 0.0;
}

inline const char* group_name(Group g) {
    switch (g) {
        case Group::Position: return "position";
        case Group::Rotation: return "rotation";
        case Group::LogScale: return "log_scale";
        case Group::Opacity: return "opacity";
        case Group::Sh: return "sh";
    }
    return "?";
}

/// Scene whose splats cover the whole image with margin, so no pixel sits near
/// a support boundary and no pixel reaches the transmittance cutoff: the
/// rendered image is a smooth function of every parameter.
inline GaussianCloud smooth_scene(std::mt19937_64& rng, int count, int sh_degree, double focal) {
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
        const double z = 3.0 + 2.0 * u(rng);
        const double spread = 3.0 * z / focal;  // about +-3 px around the centre
        auto p = random_primitive(rng, sh_degree, Vec3(-spread, -spread, z), Vec3(spread, spread, z),
                                  std::log(1.1 * z * 10.0 / focal), std::log(1.6 * z * 10.0 / focal), 0.05, 0.5);
        cloud.primitives.push_back(p);
    }
    return cloud;
}

// Direct 2D-window SSIM: no separable filtering, no shared code.
inline double naive_ssim(const ImageBuffer& a, const ImageBuffer& b) {
    double w1[11];
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
        w1[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5));
        sum += w1[i];
    }
    for (double& v : w1) v /= sum;
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    int count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y0 = 0; y0 + 11 <= a.height; ++y0) {
            for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
                double mx = 0, my = 0;
                for (int j = 0; j < 11; ++j)
                    for (int i = 0; i < 11; ++i) {
                        mx += w1[i] * w1[j] * a.at(x0 + i, y0 + j)[c];
                        my += w1[i] * w1[j] * b.at(x0 + i, y0 + j)[c];
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int j = 0; j < 11; ++j)
                    for (int i = 0; i < 11; ++i) {
                        const double dx = a.at(x0 + i, y0 + j)[c] - mx;
                        const double dy = b.at(x0 + i, y0 + j)[c] - my;
                        vx += w1[i] * w1[j] * dx * dx;
                        vy += w1[i] * w1[j] * dy * dy;
                        cxy += w1[i] * w1[j] * dx * dy;
                    }
                total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

}  // namespace sgs::testing
