#pragma once

#include <cstdint>

#include "sgs/io.hpp"

namespace sgs {

struct SynthSpec {
    int primitives = 200;
    double bounds = 1.0;               // primitives live in a ball of this radius
    int sh_degree = 1;
    double opacity_min = 0.6;
    double opacity_max = 0.95;
    double log_scale_min = -2.6;
    double log_scale_max = -1.8;

    int cameras = 8;                   // training cameras on a ring around the origin
    int held_out = 0;                  // test cameras placed between training cameras
    double radius = 4.0;
    double elevation = 0.5;
    double focal = 60.0;
    int width = 64;
    int height = 48;

    double min_alpha = 0.5;            // pixels below this coverage get confidence 0
    double noise = 0.0;                // std of Gaussian noise on point maps
    double dropout = 0.0;              // probability of zeroing a pixel's confidence

    void validate() const;
};

Json synth_spec_to_json(const SynthSpec& spec);
/// Missing keys keep their defaults; unknown keys are a config error.
SynthSpec synth_spec_from_json(const Json& j);

/// Random ground-truth cloud, ring cameras, references rendered with the
/// repository's rasterizer, own-frame point maps and a complete pair graph
/// whose maps sit in the first view's frame under a random per-edge scale.
SceneBundle synthesize(const SynthSpec& spec, std::uint64_t seed);

}  // namespace sgs
