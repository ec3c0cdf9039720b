#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sgs/grid.hpp"

namespace sgs {

/// Weights and depth-mask parameters of the training objective. Defaults are
/// repository choices.
struct LossConfig {
    double lambda_depth = 0.05;
    double lambda_gpp = 0.01;
    double base_quantile = 0.90;
    double quantile_range = 0.09;
    int patch_size = 32;
    double ssim_weight = 0.2;
    bool use_depth_mask = true;

    void validate() const;
};

struct DepthStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

inline constexpr double kVarianceEpsilon = 1e-12;

/// Pearson correlation of two equally sized samples. Returns nullopt when
/// either variance is below kVarianceEpsilon.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

/// Mean of (1 - PCC) over non-overlapping patch_size^2 tiles (partial edge
/// tiles count when they hold at least 4 pixels). Tiles where either map is
/// flat are skipped. Throws UndefinedLoss when no tile qualifies.
double depth_correlation_loss(const DepthMap& depth, const DepthMap& reference, int patch_size,
                              DepthMap* grad = nullptr);

DepthStats depth_stats(const DepthMap& depth);

/// Quantile level q_b + mu / sqrt(mu^2 + sigma^2) * dq, clamped to (0, 1].
double dynamic_threshold(const DepthStats& stats, double base_quantile, double quantile_range);

/// Linear-interpolation quantile of the values at `level` in [0, 1].
double quantile(std::span<const double> values, double level);

/// 1 where depth <= Quantile(depth, level).
Mask depth_mask(const DepthMap& depth, double level);

/// Mean over fully unmasked forward-difference stencils of
/// |grad(reference * M) - grad(depth * M)|_2. Zero on empty support.
double gpp_loss(const DepthMap& depth, const DepthMap& reference, const Mask& mask, DepthMap* grad = nullptr);

/// (1 - w) * L1 + w * (1 - SSIM) / 2.
double rgb_loss(const ImageBuffer& image, const ImageBuffer& reference, double ssim_weight,
                ImageBuffer* grad = nullptr);

struct LossTerms {
    double total = 0.0;
    double rgb = 0.0;
    double depth = 0.0;
    double gpp = 0.0;
    double mask_level = 1.0;
    ImageBuffer grad_color;
    DepthMap grad_depth;
};

/// L_rgb + lambda_depth * L_depth + lambda_gpp * L_gpp with analytic gradients
/// with respect to the rendered image and depth. The GPP mask is built from
/// the reference depth and treated as constant.
LossTerms total_loss(const ImageBuffer& image, const ImageBuffer& reference_image, const DepthMap& depth,
                     const DepthMap& reference_depth, const LossConfig& config);

}  // namespace sgs
