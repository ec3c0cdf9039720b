#include "sgs/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "sgs/error.hpp"

namespace sgs {

void AdamSettings::validate() const {
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::Config,
            "adam betas must be in [0, 1)");
    require(epsilon > 0.0, ErrorCode::Config, "adam epsilon must be > 0");
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double learning_rate,
                 const AdamSettings& settings) {
    require(params.size() == grads.size(), ErrorCode::InvalidParameter, "adam: gradient size mismatch");
    require(std::all_of(grads.begin(), grads.end(), [](double g) { return std::isfinite(g); }), ErrorCode::Diverged,
            "adam: non-finite gradient");
    if (moments.m.size() != params.size()) {
        require(moments.step == 0, ErrorCode::InvalidParameter, "adam: moment shape does not match parameters");
        moments.m.assign(params.size(), 0.0);
        moments.v.assign(params.size(), 0.0);
    }
    ++moments.step;
    const double b1 = settings.beta1, b2 = settings.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(moments.step));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(moments.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * grads[i];
        moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * grads[i] * grads[i];
        if (learning_rate == 0.0) continue;
        const double m_hat = moments.m[i] / correction1;
        const double v_hat = moments.v[i] / correction2;
        params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + settings.epsilon);
    }
}

namespace {

template <typename Get>
std::vector<double> gather(const GaussianCloud& cloud, int width, Get get) {
    std::vector<double> out(cloud.size() * width);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < width; ++c) out[i * width + c] = get(cloud.primitives[i], c);
    }
    return out;
}

}  // namespace

void adaptive_step(GaussianCloud& cloud, const CloudGradients& grads, CloudOptimizerState& state,
                   const GroupLearningRates& rates, const AdamSettings& settings) {
    const int k3 = 3 * cloud.coeffs_per_channel();
    require(grads.position.size() == 3 * cloud.size() && grads.rotation.size() == 4 * cloud.size() &&
                grads.log_scale.size() == 3 * cloud.size() && grads.opacity.size() == cloud.size() &&
                grads.sh.size() == k3 * cloud.size(),
            ErrorCode::InvalidParameter, "gradient layout does not match the cloud");
    require(grads.all_finite(), ErrorCode::Diverged, "non-finite gradient");

    auto run = [&](double lr, int width, const std::vector<double>& g, AdamMoments& moments, auto get, auto set) {
        std::vector<double> values = gather(cloud, width, get);
        adam_update(values, g, moments, lr, settings);
        if (lr == 0.0) return;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            for (int c = 0; c < width; ++c) set(cloud.primitives[i], c, values[i * width + c]);
        }
    };

    run(rates.position, 3, grads.position, state.position,
        [](const GaussianPrimitive& p, int c) { return p.position[c]; },
        [](GaussianPrimitive& p, int c, double v) { p.position[c] = v; });
    run(rates.rotation, 4, grads.rotation, state.rotation,
        [](const GaussianPrimitive& p, int c) { return p.rotation[c]; },
        [](GaussianPrimitive& p, int c, double v) { p.rotation[c] = v; });
    run(rates.log_scale, 3, grads.log_scale, state.log_scale,
        [](const GaussianPrimitive& p, int c) { return p.log_scales[c]; },
        [](GaussianPrimitive& p, int c, double v) { p.log_scales[c] = v; });
    run(rates.opacity, 1, grads.opacity, state.opacity,
        [](const GaussianPrimitive& p, int) { return p.opacity_logit; },
        [](GaussianPrimitive& p, int, double v) { p.opacity_logit = v; });
    run(rates.sh, k3, grads.sh, state.sh, [](const GaussianPrimitive& p, int c) { return p.sh[c]; },
        [](GaussianPrimitive& p, int c, double v) { p.sh[c] = v; });

    if (rates.rotation != 0.0) {
        for (auto& p : cloud.primitives) p.rotation = normalized_quaternion(p.rotation);
    }
}

}  // namespace sgs
