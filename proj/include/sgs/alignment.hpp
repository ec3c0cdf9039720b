#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/LU>

#include "sgs/optimizer.hpp"
#include "sgs/scene.hpp"

namespace sgs {

struct FocalEstimate {
    double focal = 0.0;
    int iterations = 0;
};

/// Robust focal length (pixels) of a point map expressed in its own camera
/// frame, by IRLS on the per-pixel residual norm. Pixels with confidence <= 0
/// are ignored.
FocalEstimate estimate_focal(const PointMap& map);

double average_focal(std::span<const double> focals);

/// q ~ scale * rotation * p + translation.
struct Similarity {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Weighted least-squares similarity from src to dst. Needs three or more
/// points with positive weight that are not collinear.
Similarity weighted_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst, std::span<const double> weights);

struct AlignmentOptions {
    int iterations = 300;
    double learning_rate = 0.01;
    bool cosine_decay = true;
    AdamSettings adam{0.9, 0.999, 1e-8};

    void validate() const;
};

struct AlignmentStep {
    int iteration = 0;
    double objective = 0.0;        // objective after the step (or the kept value when rejected)
    double scale_product = 1.0;    // prod of edge scales after normalisation
    double learning_rate = 0.0;
    bool accepted = false;
};

/// Per edge: P_world = scale * (R(q) * P_edge + translation).
struct EdgeTransform {
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    Vec3 translation = Vec3::Zero();
    double log_scale = 0.0;

    double scale() const;
    Vec3 apply(const Vec3& p) const;
};

struct AlignmentState {
    std::size_t anchor_edge = 0;                    // transform frozen at identity
    std::vector<EdgeTransform> edges;
    std::vector<PointMap> world_maps;               // P~ per view, confidence = mean edge confidence
    /// World-to-camera pose per view; view 0 is the identity. Empty when the
    /// view never leads an edge and no own-frame map is available.
    std::vector<std::optional<RigidTransform>> view_poses;
    std::vector<AlignmentStep> trace;
    double objective = 0.0;

    double scale_product() const;
};

/// sum_e sum_{v in e} sum_i w ||P~_v^i - scale_e T_e P_{v,e}^i||.
double alignment_objective(const ConnectivityGraph& graph, const AlignmentState& state);

/// Closed-form start: edges are chained from the anchor edge by weighted
/// similarity fits against already placed views.
AlignmentState initialize_alignment(const ConnectivityGraph& graph);

AlignmentState global_align(const ConnectivityGraph& graph, const AlignmentOptions& options = {});
/// Refines a given state (edge transforms and P~) in place of the closed-form start.
AlignmentState global_align(const ConnectivityGraph& graph, AlignmentState start, const AlignmentOptions& options);

struct InitOptions {
    double confidence_threshold = 1.0;
    double voxel_size = 0.0;           // 0 keeps every point
    int sh_degree = 1;
    double initial_opacity = 0.1;
    double fallback_scale = 0.01;      // used when a point has no neighbour
    Vec3 default_color = Vec3(0.5, 0.5, 0.5);

    void validate() const;
};

/// One isotropic primitive per surviving point. Colours come from the maps'
/// colour planes, or `default_color` when a map has none.
GaussianCloud init_gaussians_from_points(std::span<const PointMap> maps, const InitOptions& options = {});

/// Mean distance to the k nearest other points, for every point.
std::vector<double> mean_neighbor_distance(std::span<const Vec3> points, int k);

}  // namespace sgs
