#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sgs/rasterizer.hpp"
#include "sgs/scene.hpp"

namespace sgs {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;

    void validate() const;
};

/// First and second moment estimates for one parameter vector.
struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update in place. Throws Diverged on a non-finite
/// gradient before touching any state.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double learning_rate,
                 const AdamSettings& settings);

struct GroupLearningRates {
    double position = 1.6e-4;
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double opacity = 5e-2;
    double sh = 2.5e-3;
};

struct CloudOptimizerState {
    AdamMoments position;
    AdamMoments rotation;
    AdamMoments log_scale;
    AdamMoments opacity;
    AdamMoments sh;
};

/// Adam step over every parameter group of the cloud. Quaternions of an
/// updated rotation group are renormalised afterwards; a group with learning
/// rate 0 is left untouched.
void adaptive_step(GaussianCloud& cloud, const CloudGradients& grads, CloudOptimizerState& state,
                   const GroupLearningRates& rates, const AdamSettings& settings);

}  // namespace sgs
