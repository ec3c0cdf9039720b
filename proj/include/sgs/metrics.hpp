#pragma once

#include "sgs/grid.hpp"

namespace sgs {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kPsnrCapDb = 99.0;

struct PsnrResult {
    double db = 0.0;
    bool exact_match = false;
};

/// Peak signal-to-noise ratio with peak value 1. Identical images report the
/// 99 dB cap with `exact_match` set.
PsnrResult psnr(const ImageBuffer& image, const ImageBuffer& reference);

/// Single-scale SSIM over an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, evaluated on valid window positions only and averaged
/// over positions and channels. When `grad` is non-null it receives
/// d(ssim)/d(image).
double ssim(const ImageBuffer& image, const ImageBuffer& reference, ImageBuffer* grad = nullptr);

}  // namespace sgs
