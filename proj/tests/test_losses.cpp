#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sgs/error.hpp"
#include "sgs/losses.hpp"
#include "sgs/metrics.hpp"

using namespace sgs;

namespace {

DepthMap random_depth(std::mt19937_64& rng, int w, int h, double lo = 1.0, double hi = 5.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    DepthMap d(w, h, 0.0);
    for (auto& v : d.values) v = u(rng);
    return d;
}

ImageBuffer random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageBuffer img = make_image(w, h);
    for (auto& v : img.values) v = Vec3(u(rng), u(rng), u(rng));
    return img;
}

double two_pass_pcc(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("pearson examples") {
    const std::vector<double> a = {1, 4, 2, 8, 5, 7};
    std::vector<double> neg, affine;
    for (double v : a) {
        neg.push_back(-v);
        affine.push_back(3 * v + 7);
    }
    CHECK(*pearson(a, a) == doctest::Approx(1.0));
    CHECK(*pearson(a, neg) == doctest::Approx(-1.0));
    CHECK(std::abs(*pearson(affine, a) - 1.0) < 1e-9);
    CHECK_FALSE(pearson(std::vector<double>(6, 2.0), a));
    CHECK_THROWS_AS(pearson(a, std::vector<double>{1, 2}), Error);
    CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), Error);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(256), y(256);
        for (int i = 0; i < 256; ++i) {
            x[i] = u(rng);
            y[i] = 0.5 * x[i] + u(rng);
        }
        CHECK(std::abs(*pearson(x, y) - two_pass_pcc(x, y)) < 1e-12);
    }
}

TEST_CASE("depth correlation loss") {
    std::mt19937_64 rng(2);
    const DepthMap ref = random_depth(rng, 40, 30);
    CHECK(depth_correlation_loss(ref, ref, 16) == doctest::Approx(0.0).epsilon(1e-12));

    DepthMap scaled = ref, flipped = ref;
    for (auto& v : scaled.values) v = 2.5 * v + 3.0;
    for (auto& v : flipped.values) v = -v;
    CHECK(depth_correlation_loss(scaled, ref, 16) < 1e-9);
    CHECK(depth_correlation_loss(flipped, ref, 16) == doctest::Approx(2.0));

    for (int trial = 0; trial < 20; ++trial) {
        const DepthMap d = random_depth(rng, 23, 19);
        const double l = depth_correlation_loss(d, ref.width == 23 ? ref : random_depth(rng, 23, 19), 8);
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
    }

    CHECK_THROWS_AS(depth_correlation_loss(DepthMap(8, 8, 1.0), DepthMap(8, 8, 1.0), 4), Error);
    CHECK_THROWS_AS(depth_correlation_loss(DepthMap(8, 8, 1.0), DepthMap(9, 8, 1.0), 4), Error);
}

TEST_CASE("depth correlation flat patches are excluded from the average") {
    std::mt19937_64 rng(3);
    DepthMap ref = random_depth(rng, 8, 4);
    DepthMap d = ref;
    // Left 4x4 tile flat in the render, right tile perfectly anti-correlated.
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) d.at(x, y) = 1.0;
        for (int x = 4; x < 8; ++x) d.at(x, y) = -ref.at(x, y);
    }
    CHECK(depth_correlation_loss(d, ref, 4) == doctest::Approx(2.0));
}

TEST_CASE("depth correlation gradient matches central differences") {
    std::mt19937_64 rng(4);
    const DepthMap ref = random_depth(rng, 13, 11);
    const DepthMap d = random_depth(rng, 13, 11);
    DepthMap grad;
    depth_correlation_loss(d, ref, 5, &grad);
    for (std::size_t i = 0; i < d.size(); i += 7) {
        DepthMap lo = d, hi = d;
        lo[i] -= 1e-6;
        hi[i] += 1e-6;
        const double fd = (depth_correlation_loss(hi, ref, 5) - depth_correlation_loss(lo, ref, 5)) / 2e-6;
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("depth stats") {
    const auto c = depth_stats(DepthMap(3, 3, 5.0));
    CHECK(c.mean == 5.0);
    CHECK(c.stddev == 0.0);
    DepthMap two(2, 1, 0.0);
    two[1] = 10.0;
    const auto s = depth_stats(two);
    CHECK(s.mean == 5.0);
    CHECK(s.stddev == 5.0);
    CHECK_THROWS_AS(depth_stats(DepthMap{}), Error);

    std::mt19937_64 rng(5);
    const DepthMap d = random_depth(rng, 31, 17);
    double mean = 0;
    for (double v : d.values) mean += v;
    mean /= d.size();
    double var = 0;
    for (double v : d.values) var += (v - mean) * (v - mean);
    CHECK(std::abs(depth_stats(d).mean - mean) < 1e-12);
    CHECK(std::abs(depth_stats(d).stddev - std::sqrt(var / d.size())) < 1e-12);
}

TEST_CASE("dynamic threshold") {
    const double qb = 0.8, dq = 0.15;
    CHECK(dynamic_threshold({4.0, 0.0}, qb, dq) == qb + dq);
    CHECK(dynamic_threshold({2.0, 2.0}, qb, dq) == doctest::Approx(qb + dq / std::sqrt(2.0)));
    CHECK(dynamic_threshold({3.0, 4.0}, qb, dq) == doctest::Approx(qb + 0.6 * dq));
    CHECK(dynamic_threshold({0.0, 0.0}, qb, dq) == qb);
}

TEST_CASE("depth mask") {
    DepthMap ramp(10, 10, 0.0);
    for (int i = 0; i < 100; ++i) ramp[i] = i + 1;
    std::vector<double> shuffled = ramp.values;
    std::mt19937_64 rng(6);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    ramp.values = shuffled;

    const Mask all = depth_mask(ramp, 1.0);
    CHECK(std::count(all.values.begin(), all.values.end(), 1) == 100);

    // Sort-based oracle: linear-interpolated quantile of 1..100 at 0.9 is 90.1.
    std::vector<double> sorted = ramp.values;
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.9 * 99;
    const double thr = sorted[89] + (pos - 89) * (sorted[90] - sorted[89]);
    const Mask m = depth_mask(ramp, 0.9);
    int removed = 0;
    for (std::size_t i = 0; i < ramp.size(); ++i) {
        CHECK(static_cast<bool>(m[i]) == (ramp[i] <= thr));
        if (!m[i]) {
            ++removed;
            CHECK(ramp[i] > 90.0);
        }
    }
    CHECK(removed == 10);

    const Mask flat = depth_mask(DepthMap(5, 5, 2.0), 0.3);
    CHECK(std::count(flat.values.begin(), flat.values.end(), 1) == 25);
}

TEST_CASE("depth mask retains enough pixels and nests") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const DepthMap d = random_depth(rng, 9, 7);
        const double a = u(rng), b = u(rng);
        const double lo = std::min(a, b), hi = std::max(a, b);
        const Mask ml = depth_mask(d, lo), mh = depth_mask(d, hi);
        const double kept = std::count(ml.values.begin(), ml.values.end(), 1) / static_cast<double>(d.size());
        CHECK(kept >= lo - 1.0 / d.size());
        for (std::size_t i = 0; i < d.size(); ++i) CHECK((!ml[i] || mh[i]));
    }
}

TEST_CASE("gpp loss") {
    std::mt19937_64 rng(8);
    const DepthMap ref = random_depth(rng, 12, 9);
    const Mask full(12, 9, 1);
    CHECK(gpp_loss(ref, ref, full) == 0.0);

    DepthMap shifted = ref;
    for (auto& v : shifted.values) v += 3.0;
    CHECK(gpp_loss(shifted, ref, full) < 1e-12);

    // Unit step between columns 5 and 6, flat render: hand-rolled forward differences.
    const int w = 12, h = 9;
    DepthMap step(w, h, 0.0), flat(w, h, 2.0);
    for (int y = 0; y < h; ++y)
        for (int x = 6; x < w; ++x) step.at(x, y) = 1.0;
    double sum = 0;
    int support = 0;
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            const double gx = (step.at(x + 1, y) - step.at(x, y)) - 0.0;
            const double gy = (step.at(x, y + 1) - step.at(x, y)) - 0.0;
            sum += std::hypot(gx, gy);
            ++support;
        }
    }
    CHECK(gpp_loss(flat, step, full) == doctest::Approx(sum / support));
    CHECK(gpp_loss(flat, step, full) == doctest::Approx((h - 1) * 1.0 / ((w - 1) * (h - 1))));

    CHECK(gpp_loss(flat, step, Mask(w, h, 0)) == 0.0);
    CHECK_THROWS_AS(gpp_loss(flat, step, Mask(w, h + 1, 1)), Error);
}

TEST_CASE("gpp loss shift invariance with a partial mask") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const DepthMap d = random_depth(rng, 16, 12), ref = random_depth(rng, 16, 12);
        const Mask m = depth_mask(ref, 0.7);
        DepthMap d2 = d, r2 = ref;
        for (auto& v : d2.values) v += 11.0;
        for (auto& v : r2.values) v += 11.0;
        CHECK(std::abs(gpp_loss(d2, r2, m) - gpp_loss(d, ref, m)) < 1e-12);
    }
}

TEST_CASE("rgb loss") {
    std::mt19937_64 rng(10);
    const ImageBuffer a = random_image(rng, 16, 14), b = random_image(rng, 16, 14);
    CHECK(rgb_loss(a, a, 0.2) == doctest::Approx(0.0).epsilon(1e-15));

    const ImageBuffer zero = make_image(8, 8), half = make_image(8, 8, Vec3::Constant(0.5));
    CHECK(rgb_loss(zero, half, 0.0) == doctest::Approx(0.5));

    double l1 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) l1 += (a[i] - b[i]).cwiseAbs().sum();
    l1 /= 3.0 * a.size();
    CHECK(std::abs(rgb_loss(a, b, 0.2) - (0.8 * l1 + 0.2 * (1 - ssim(a, b)) / 2)) < 1e-9);
    CHECK_THROWS_AS(rgb_loss(a, zero, 0.2), Error);

    ImageBuffer grad;
    rgb_loss(a, b, 0.2, &grad);
    for (int trial = 0; trial < 20; ++trial) {
        const int x = trial % 16, y = (trial * 5) % 14, c = trial % 3;
        ImageBuffer lo = a, hi = a;
        lo.at(x, y)[c] -= 1e-6;
        hi.at(x, y)[c] += 1e-6;
        CHECK(grad.at(x, y)[c] == doctest::Approx((rgb_loss(hi, b, 0.2) - rgb_loss(lo, b, 0.2)) / 2e-6).epsilon(1e-5));
    }
}

TEST_CASE("total loss") {
    std::mt19937_64 rng(11);
    const int w = 24, h = 20;
    const ImageBuffer img = random_image(rng, w, h), ref_img = random_image(rng, w, h);
    const DepthMap depth = random_depth(rng, w, h), ref_depth = random_depth(rng, w, h);
    LossConfig cfg;
    cfg.patch_size = 8;
    cfg.lambda_depth = 0.3;
    cfg.lambda_gpp = 0.2;

    const LossTerms perfect = total_loss(ref_img, ref_img, ref_depth, ref_depth, cfg);
    CHECK(perfect.total == doctest::Approx(0.0).epsilon(1e-12));

    const LossTerms t = total_loss(img, ref_img, depth, ref_depth, cfg);
    CHECK(t.total >= 0.0);
    CHECK(t.total == t.rgb + cfg.lambda_depth * t.depth + cfg.lambda_gpp * t.gpp);
    CHECK(t.depth == depth_correlation_loss(depth, ref_depth, 8));
    CHECK(t.mask_level == dynamic_threshold(depth_stats(ref_depth), cfg.base_quantile, cfg.quantile_range));
    CHECK(t.gpp == gpp_loss(depth, ref_depth, depth_mask(ref_depth, t.mask_level)));

    LossConfig rgb_only = cfg;
    rgb_only.lambda_depth = rgb_only.lambda_gpp = 0.0;
    CHECK(total_loss(img, ref_img, depth, ref_depth, rgb_only).total == rgb_loss(img, ref_img, cfg.ssim_weight));

    const Mask mask = depth_mask(ref_depth, t.mask_level);
    for (std::size_t i = 0; i < depth.size(); i += 5) {
        if (!mask[i]) continue;
        DepthMap lo = depth, hi = depth;
        lo[i] -= 1e-6;
        hi[i] += 1e-6;
        const double fd =
            (total_loss(img, ref_img, hi, ref_depth, cfg).total - total_loss(img, ref_img, lo, ref_depth, cfg).total) /
            2e-6;
        CHECK(t.grad_depth[i] == doctest::Approx(fd).epsilon(1e-4));
    }

    LossConfig bad = cfg;
    bad.base_quantile = 0.95;
    bad.quantile_range = 0.1;
    CHECK_THROWS_AS(total_loss(img, ref_img, depth, ref_depth, bad), Error);
}
