#include "sgs/trainer.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "sgs/metrics.hpp"

namespace sgs {

void TrainConfig::validate() const {
    require(iterations >= 1, ErrorCode::Config, "iterations must be >= 1");
    const auto& lr = learning_rates;
    for (double v : {lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.sh, position_lr_final}) {
        require(std::isfinite(v) && v >= 0.0, ErrorCode::Config, "learning rates must be finite and >= 0");
    }
    require((lr.position == 0.0) == (position_lr_final == 0.0), ErrorCode::Config,
            "position lr and its final value must both be zero or both positive");
    require(checkpoint_every >= 0, ErrorCode::Config, "checkpoint_every must be >= 0");
    adam.validate();
    loss.validate();
}

double TrainConfig::position_lr(int iteration) const {
    const double lr0 = learning_rates.position;
    if (lr0 == 0.0) return 0.0;
    const double t = iterations > 1 ? static_cast<double>(iteration) / (iterations - 1) : 0.0;
    return std::exp((1.0 - t) * std::log(lr0) + t * std::log(position_lr_final));
}

TrainingDiverged::TrainingDiverged(const std::string& message, TrainLog partial)
    : Error(ErrorCode::Diverged, message), partial_(std::move(partial)) {}

namespace {

bool cloud_finite(const GaussianCloud& cloud) {
    for (const auto& p : cloud.primitives) {
        if (!p.position.allFinite() || !p.rotation.allFinite() || !p.log_scales.allFinite() ||
            !std::isfinite(p.opacity_logit)) {
            return false;
        }
        for (double c : p.sh) {
            if (!std::isfinite(c)) return false;
        }
    }
    return true;
}

// A render whose depth is flat in every patch leaves the correlation term
// undefined; that iteration trains without it.
LossTerms loss_for_iteration(const RenderOutput& out, const TrainView& view, const LossConfig& loss) {
    try {
        return total_loss(out.color, view.image, out.depth, view.depth, loss);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedLoss) throw;
    }
    LossConfig fallback = loss;
    fallback.lambda_depth = 0.0;
    return total_loss(out.color, view.image, out.depth, view.depth, fallback);
}

}  // namespace

TrainResult train(GaussianCloud initial, std::span<const TrainView> views, const TrainConfig& config,
                  const CheckpointFn& checkpoint) {
    config.validate();
    require(!views.empty(), ErrorCode::InvalidParameter, "training needs at least one view");
    require(!initial.empty(), ErrorCode::EmptyCloud, "initial cloud is empty");
    initial.validate();
    for (const auto& v : views) {
        v.camera.validate();
        require(v.image.width == v.camera.width && v.image.height == v.camera.height && v.depth.same_shape(v.image),
                ErrorCode::InvalidParameter, "reference size does not match its camera");
    }

    TrainResult result;
    result.cloud = std::move(initial);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
    const auto start = std::chrono::steady_clock::now();

    for (int it = 0; it < config.iterations; ++it) {
        const std::size_t vi =
            config.schedule == ViewSchedule::RoundRobin ? static_cast<std::size_t>(it) % views.size() : pick(rng);
        const TrainView& view = views[vi];

        const RenderOutput out = render(result.cloud, view.camera, config.render);
        const LossTerms terms = loss_for_iteration(out, view, config.loss);
        if (!std::isfinite(terms.total)) {
            throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it), result.log);
        }

        GroupLearningRates rates = config.learning_rates;
        rates.position = config.position_lr(it);
        try {
            const CloudGradients grads =
                render_backward(result.cloud, view.camera, terms.grad_color, terms.grad_depth, config.render);
            adaptive_step(result.cloud, grads, result.optimizer, rates, config.adam);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::Diverged) throw;
            throw TrainingDiverged(std::string(e.what()) + " at iteration " + std::to_string(it), result.log);
        }
        if (!cloud_finite(result.cloud)) {
            throw TrainingDiverged("non-finite parameter at iteration " + std::to_string(it), result.log);
        }

        TrainRecord rec;
        rec.iteration = it;
        rec.view = static_cast<int>(vi);
        rec.total = terms.total;
        rec.rgb = terms.rgb;
        rec.depth = terms.depth;
        rec.gpp = terms.gpp;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.records.push_back(rec);

        if (checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
            checkpoint(it + 1, result.cloud, result.optimizer);
        }
    }
    return result;
}

std::vector<ViewMetrics> evaluate_views(const GaussianCloud& cloud, std::span<const TrainView> views,
                                        std::span<const std::string> names, const RenderSettings& settings) {
    require(names.size() == views.size(), ErrorCode::InvalidParameter, "one name per view expected");
    std::vector<ViewMetrics> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const RenderOutput r = render(cloud, views[i].camera, settings);
        const PsnrResult p = psnr(r.color, views[i].image);
        out.push_back({names[i], p.db, ssim(r.color, views[i].image), p.exact_match});
    }
    return out;
}

}  // namespace sgs
