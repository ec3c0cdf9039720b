#include "sgs/metrics.hpp"

#include <array>
#include <cmath>

#include "sgs/error.hpp"

namespace sgs {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

using Plane = Grid<double>;

// Separable valid-region filtering: output is (W - 10) x (H - 10).
Plane filter_valid(const Plane& in, const std::array<double, kSsimWindow>& w) {
    const int ow = in.width - kSsimWindow + 1;
    const int oh = in.height - kSsimWindow + 1;
    Plane horiz(ow, in.height, 0.0);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) acc += w[k] * in.at(x + k, y);
            horiz.at(x, y) = acc;
        }
    }
    Plane out(ow, oh, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) acc += w[k] * horiz.at(x, y + k);
            out.at(x, y) = acc;
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters a valid-sized map back to full size.
Plane filter_valid_adjoint(const Plane& in, int width, int height, const std::array<double, kSsimWindow>& w) {
    Plane vert(in.width, height, 0.0);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            for (int k = 0; k < kSsimWindow; ++k) vert.at(x, y + k) += w[k] * in.at(x, y);
        }
    }
    Plane out(width, height, 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            for (int k = 0; k < kSsimWindow; ++k) out.at(x + k, y) += w[k] * vert.at(x, y);
        }
    }
    return out;
}

Plane channel(const ImageBuffer& img, int c) {
    Plane p(img.width, img.height, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) p[i] = img[i][c];
    return p;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.width, a.height, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) p[i] = a[i] * b[i];
    return p;
}

}  // namespace

PsnrResult psnr(const ImageBuffer& image, const ImageBuffer& reference) {
    require(image.same_shape(reference) && !image.empty(), ErrorCode::InvalidParameter,
            "psnr: image dimensions differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) sum += (image[i] - reference[i]).squaredNorm();
    const double mse = sum / (3.0 * static_cast<double>(image.size()));
    if (mse == 0.0) return {kPsnrCapDb, true};
    return {std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse)), false};
}

double ssim(const ImageBuffer& image, const ImageBuffer& reference, ImageBuffer* grad) {
    require(image.same_shape(reference), ErrorCode::InvalidParameter, "ssim: image dimensions differ");
    require(image.width >= kSsimWindow && image.height >= kSsimWindow, ErrorCode::InvalidParameter,
            "ssim: image is smaller than the 11x11 window");
    static const auto window = gaussian_window();
    const int ow = image.width - kSsimWindow + 1;
    const int oh = image.height - kSsimWindow + 1;
    const double count = 3.0 * ow * oh;

    if (grad) *grad = make_image(image.width, image.height);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Plane x = channel(image, c);
        const Plane y = channel(reference, c);
        const Plane mu_x = filter_valid(x, window);
        const Plane mu_y = filter_valid(y, window);
        const Plane m_xx = filter_valid(product(x, x), window);
        const Plane m_yy = filter_valid(product(y, y), window);
        const Plane m_xy = filter_valid(product(x, y), window);

        Plane d_mx(ow, oh, 0.0), d_mxx(ow, oh, 0.0), d_mxy(ow, oh, 0.0);
        for (std::size_t i = 0; i < mu_x.size(); ++i) {
            const double mx = mu_x[i], my = mu_y[i];
            const double var_x = m_xx[i] - mx * mx;
            const double var_y = m_yy[i] - my * my;
            const double cov = m_xy[i] - mx * my;
            const double a1 = 2.0 * mx * my + kC1;
            const double a2 = 2.0 * cov + kC2;
            const double b1 = mx * mx + my * my + kC1;
            const double b2 = var_x + var_y + kC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (!grad) continue;
            const double den = b1 * b2;
            const double ds_dmx = (2.0 * my * a2 - s * 2.0 * mx * b2) / den;
            const double ds_dvar = -s * b1 / den;
            const double ds_dcov = 2.0 * a1 / den;
            d_mx[i] = (ds_dmx - 2.0 * mx * ds_dvar - my * ds_dcov) / count;
            d_mxx[i] = ds_dvar / count;
            d_mxy[i] = ds_dcov / count;
        }
        if (!grad) continue;
        const Plane g_mx = filter_valid_adjoint(d_mx, image.width, image.height, window);
        const Plane g_mxx = filter_valid_adjoint(d_mxx, image.width, image.height, window);
        const Plane g_mxy = filter_valid_adjoint(d_mxy, image.width, image.height, window);
        for (std::size_t i = 0; i < x.size(); ++i) {
            (*grad)[i][c] = g_mx[i] + 2.0 * x[i] * g_mxx[i] + y[i] * g_mxy[i];
        }
    }
    return total / count;
}

}  // namespace sgs
