#pragma once

#include <string>
#include <vector>

#include "sgs/alignment.hpp"
#include "sgs/io.hpp"
#include "sgs/trainer.hpp"

namespace sgs {

struct InitPipelineOptions {
    InitOptions init;
    AlignmentOptions align;
};

struct ViewPoseError {
    std::string view;
    double rotation_deg = 0.0;
    double center_distance = 0.0;     // in bundle units, after registration
};

struct InitResult {
    GaussianCloud cloud;
    std::vector<double> focals;       // per training view
    double mean_focal = 0.0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    std::size_t alignment_steps = 0;
    Similarity registration;          // aligned frame -> bundle frame
    std::size_t confident_pixels = 0;
    std::vector<ViewPoseError> pose_errors;

    Json to_json() const;
};

/// Focal estimation, global alignment of the pair graph and cloud
/// initialisation. The aligned points are registered into the bundle's camera
/// frame by a similarity fit between estimated and given camera centres.
InitResult initialize_from_bundle(const SceneBundle& bundle, const InitPipelineOptions& options = {});

/// Training (train = true) or held-out views of a bundle.
std::vector<TrainView> bundle_views(const SceneBundle& bundle, bool train, std::vector<std::string>* names = nullptr);

}  // namespace sgs
