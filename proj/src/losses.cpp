#include "sgs/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sgs/error.hpp"
#include "sgs/metrics.hpp"

namespace sgs {

void LossConfig::validate() const {
    require(lambda_depth >= 0.0 && lambda_gpp >= 0.0 && ssim_weight >= 0.0 && ssim_weight <= 1.0,
            ErrorCode::Config, "loss weights must be non-negative and ssim_weight <= 1");
    require(base_quantile > 0.0 && base_quantile < 1.0, ErrorCode::Config, "base_quantile must be in (0, 1)");
    require(quantile_range >= 0.0 && base_quantile + quantile_range <= 1.0, ErrorCode::Config,
            "quantile_range must be >= 0 with base_quantile + quantile_range <= 1");
    require(patch_size >= 2, ErrorCode::Config, "patch_size must be >= 2");
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorCode::InvalidParameter, "pearson: sample sizes differ");
    require(a.size() >= 2, ErrorCode::InvalidParameter, "pearson: need at least two samples");
    const double n = static_cast<double>(a.size());
    double ea = 0, eb = 0, eab = 0, eaa = 0, ebb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ea += a[i];
        eb += b[i];
        eab += a[i] * b[i];
        eaa += a[i] * a[i];
        ebb += b[i] * b[i];
    }
    ea /= n;
    eb /= n;
    eab /= n;
    eaa /= n;
    ebb /= n;
    const double var_a = eaa - ea * ea;
    const double var_b = ebb - eb * eb;
    if (var_a < kVarianceEpsilon || var_b < kVarianceEpsilon) return std::nullopt;
    return std::clamp((eab - ea * eb) / (std::sqrt(var_a) * std::sqrt(var_b)), -1.0, 1.0);
}

double depth_correlation_loss(const DepthMap& depth, const DepthMap& reference, int patch_size, DepthMap* grad) {
    require(depth.same_shape(reference), ErrorCode::InvalidParameter, "depth correlation: map sizes differ");
    require(patch_size >= 2, ErrorCode::InvalidParameter, "depth correlation: patch_size must be >= 2");
    if (grad) *grad = DepthMap(depth.width, depth.height, 0.0);

    struct Patch {
        int x0, y0, x1, y1;
        double pcc;
        double mean_d, mean_r, sd_d, sd_r, n;
    };
    std::vector<Patch> valid;
    std::vector<double> a, b;
    for (int y0 = 0; y0 < depth.height; y0 += patch_size) {
        for (int x0 = 0; x0 < depth.width; x0 += patch_size) {
            const int x1 = std::min(depth.width, x0 + patch_size);
            const int y1 = std::min(depth.height, y0 + patch_size);
            if ((x1 - x0) * (y1 - y0) < 4) continue;
            a.clear();
            b.clear();
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    a.push_back(depth.at(x, y));
                    b.push_back(reference.at(x, y));
                }
            }
            const auto pcc = pearson(a, b);
            if (!pcc) continue;
            Patch p{x0, y0, x1, y1, *pcc, 0, 0, 0, 0, static_cast<double>(a.size())};
            for (std::size_t i = 0; i < a.size(); ++i) {
                p.mean_d += a[i];
                p.mean_r += b[i];
            }
            p.mean_d /= p.n;
            p.mean_r /= p.n;
            for (std::size_t i = 0; i < a.size(); ++i) {
                p.sd_d += (a[i] - p.mean_d) * (a[i] - p.mean_d);
                p.sd_r += (b[i] - p.mean_r) * (b[i] - p.mean_r);
            }
            p.sd_d = std::sqrt(p.sd_d / p.n);
            p.sd_r = std::sqrt(p.sd_r / p.n);
            valid.push_back(p);
        }
    }
    require(!valid.empty(), ErrorCode::UndefinedLoss, "depth correlation: no patch has non-zero variance");

    const double count = static_cast<double>(valid.size());
    double loss = 0.0;
    for (const auto& p : valid) {
        loss += 1.0 - p.pcc;
        if (!grad) continue;
        // d PCC / d D_i = (R_i - mean_R) / (n sD sR) - PCC (D_i - mean_D) / (n sD^2)
        for (int y = p.y0; y < p.y1; ++y) {
            for (int x = p.x0; x < p.x1; ++x) {
                const double dpcc = (reference.at(x, y) - p.mean_r) / (p.n * p.sd_d * p.sd_r) -
                                    p.pcc * (depth.at(x, y) - p.mean_d) / (p.n * p.sd_d * p.sd_d);
                grad->at(x, y) = -dpcc / count;
            }
        }
    }
    return loss / count;
}

DepthStats depth_stats(const DepthMap& depth) {
    require(!depth.empty(), ErrorCode::InvalidParameter, "depth_stats: empty map");
    const double n = static_cast<double>(depth.size());
    double mean = 0.0;
    for (double v : depth.values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : depth.values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / n)};
}

double dynamic_threshold(const DepthStats& stats, double base_quantile, double quantile_range) {
    const double norm = std::sqrt(stats.mean * stats.mean + stats.stddev * stats.stddev);
    const double ratio = norm > 0.0 ? stats.mean / norm : 0.0;
    const double level = base_quantile + ratio * quantile_range;
    return std::clamp(level, std::nextafter(0.0, 1.0), 1.0);
}

double quantile(std::span<const double> values, double level) {
    require(!values.empty(), ErrorCode::InvalidParameter, "quantile: no values");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = std::clamp(level, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Mask depth_mask(const DepthMap& depth, double level) {
    Mask mask(depth.width, depth.height, 1);
    if (depth.empty() || level >= 1.0) return mask;
    const double threshold = quantile(depth.values, level);
    for (std::size_t i = 0; i < depth.size(); ++i) mask[i] = depth[i] <= threshold ? 1 : 0;
    return mask;
}

double gpp_loss(const DepthMap& depth, const DepthMap& reference, const Mask& mask, DepthMap* grad) {
    require(depth.same_shape(reference) && depth.same_shape(mask), ErrorCode::InvalidParameter,
            "gpp: map sizes differ");
    if (grad) *grad = DepthMap(depth.width, depth.height, 0.0);
    auto masked = [&](const DepthMap& d, int x, int y) { return mask.at(x, y) ? d.at(x, y) : 0.0; };

    struct Term {
        int x, y;
        double rx, ry, norm;
    };
    std::vector<Term> terms;
    for (int y = 0; y + 1 < depth.height; ++y) {
        for (int x = 0; x + 1 < depth.width; ++x) {
            if (!mask.at(x, y) || !mask.at(x + 1, y) || !mask.at(x, y + 1)) continue;
            const double gx = masked(depth, x + 1, y) - masked(depth, x, y);
            const double gy = masked(depth, x, y + 1) - masked(depth, x, y);
            const double rgx = masked(reference, x + 1, y) - masked(reference, x, y);
            const double rgy = masked(reference, x, y + 1) - masked(reference, x, y);
            const double rx = rgx - gx;
            const double ry = rgy - gy;
            terms.push_back({x, y, rx, ry, std::sqrt(rx * rx + ry * ry)});
        }
    }
    if (terms.empty()) return 0.0;

    const double n = static_cast<double>(terms.size());
    double loss = 0.0;
    for (const auto& t : terms) {
        loss += t.norm;
        if (!grad || t.norm == 0.0) continue;
        // residual = grad(ref) - grad(depth); d|r|/d gx = -rx / |r|
        const double dgx = -t.rx / t.norm / n;
        const double dgy = -t.ry / t.norm / n;
        grad->at(t.x + 1, t.y) += dgx;
        grad->at(t.x, t.y + 1) += dgy;
        grad->at(t.x, t.y) -= dgx + dgy;
    }
    return loss / n;
}

double rgb_loss(const ImageBuffer& image, const ImageBuffer& reference, double ssim_weight, ImageBuffer* grad) {
    require(image.same_shape(reference) && !image.empty(), ErrorCode::InvalidParameter,
            "rgb loss: image sizes differ");
    const double n = 3.0 * static_cast<double>(image.size());
    const double l1_weight = 1.0 - ssim_weight;
    double l1 = 0.0;
    if (grad) *grad = make_image(image.width, image.height);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const Vec3 diff = image[i] - reference[i];
        l1 += diff.cwiseAbs().sum();
        if (grad) {
            for (int c = 0; c < 3; ++c) {
                (*grad)[i][c] = l1_weight * (diff[c] > 0.0 ? 1.0 : (diff[c] < 0.0 ? -1.0 : 0.0)) / n;
            }
        }
    }
    double loss = l1_weight * l1 / n;
    if (ssim_weight > 0.0) {
        ImageBuffer ssim_grad;
        const double s = ssim(image, reference, grad ? &ssim_grad : nullptr);
        loss += ssim_weight * (1.0 - s) / 2.0;
        if (grad) {
            for (std::size_t i = 0; i < image.size(); ++i) (*grad)[i] -= 0.5 * ssim_weight * ssim_grad[i];
        }
    }
    return loss;
}

LossTerms total_loss(const ImageBuffer& image, const ImageBuffer& reference_image, const DepthMap& depth,
                     const DepthMap& reference_depth, const LossConfig& config) {
    config.validate();
    require(image.same_shape(depth) && depth.same_shape(reference_depth), ErrorCode::InvalidParameter,
            "total loss: render and reference sizes differ");
    LossTerms terms;
    terms.rgb = rgb_loss(image, reference_image, config.ssim_weight, &terms.grad_color);
    terms.grad_depth = DepthMap(depth.width, depth.height, 0.0);

    if (config.lambda_depth > 0.0) {
        DepthMap g;
        terms.depth = depth_correlation_loss(depth, reference_depth, config.patch_size, &g);
        for (std::size_t i = 0; i < g.size(); ++i) terms.grad_depth[i] += config.lambda_depth * g[i];
    }
    if (config.lambda_gpp > 0.0) {
        terms.mask_level = config.use_depth_mask ? dynamic_threshold(depth_stats(reference_depth),
                                                                     config.base_quantile, config.quantile_range)
                                                 : 1.0;
        const Mask mask = depth_mask(reference_depth, terms.mask_level);
        DepthMap g;
        terms.gpp = gpp_loss(depth, reference_depth, mask, &g);
        for (std::size_t i = 0; i < g.size(); ++i) terms.grad_depth[i] += config.lambda_gpp * g[i];
    }
    terms.total = terms.rgb + config.lambda_depth * terms.depth + config.lambda_gpp * terms.gpp;
    return terms;
}

}  // namespace sgs
