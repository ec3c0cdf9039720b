#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sgs/error.hpp"
#include "sgs/losses.hpp"
#include "sgs/optimizer.hpp"
#include "sgs/rasterizer.hpp"
#include "sgs/scene.hpp"

namespace sgs {

enum class ViewSchedule { RoundRobin, Random };

struct TrainConfig {
    int iterations = 1000;
    GroupLearningRates learning_rates;
    double position_lr_final = 1.6e-6;   // position lr decays exponentially to this
    AdamSettings adam;
    std::uint64_t seed = 0;
    ViewSchedule schedule = ViewSchedule::RoundRobin;
    LossConfig loss;
    RenderSettings render;
    int checkpoint_every = 0;            // 0 disables checkpoints

    /// Throws Config on out-of-range values.
    void validate() const;
    /// Position learning rate at a 0-based iteration.
    double position_lr(int iteration) const;
};

/// One training view: camera plus reference image and depth at its resolution.
struct TrainView {
    Camera camera;
    ImageBuffer image;
    DepthMap depth;
};

struct TrainRecord {
    int iteration = 0;
    int view = 0;
    double total = 0.0;
    double rgb = 0.0;
    double depth = 0.0;
    double gpp = 0.0;
    double seconds = 0.0;                // wall clock since the start of training
};

struct ViewMetrics {
    std::string view;
    double psnr_db = 0.0;
    double ssim = 0.0;
    bool exact_match = false;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::vector<ViewMetrics> held_out;
};

struct TrainResult {
    GaussianCloud cloud;
    TrainLog log;
    CloudOptimizerState optimizer;
};

/// Raised when a loss, gradient or parameter turns non-finite. Carries the
/// records of every iteration completed before the failure.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& message, TrainLog partial);
    const TrainLog& partial_log() const { return partial_; }

private:
    TrainLog partial_;
};

/// Called after iterations i (1-based count) where i % checkpoint_every == 0.
using CheckpointFn = std::function<void(int completed, const GaussianCloud&, const CloudOptimizerState&)>;

TrainResult train(GaussianCloud initial, std::span<const TrainView> views, const TrainConfig& config,
                  const CheckpointFn& checkpoint = {});

/// PSNR and SSIM of the cloud rendered into each view.
std::vector<ViewMetrics> evaluate_views(const GaussianCloud& cloud, std::span<const TrainView> views,
                                        std::span<const std::string> names, const RenderSettings& settings = {});

}  // namespace sgs
