#include "sgs/pipeline.hpp"

#include <cmath>
#include <numbers>

#include "sgs/error.hpp"

namespace sgs {

Json InitResult::to_json() const {
    Json j;
    j["primitives"] = cloud.size();
    j["confident_pixels"] = confident_pixels;
    j["focals"] = focals;
    j["mean_focal"] = mean_focal;
    j["alignment"] = {{"initial_objective", initial_objective},
                      {"final_objective", final_objective},
                      {"steps", alignment_steps}};
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r) {
        rot.push_back({registration.rotation(r, 0), registration.rotation(r, 1), registration.rotation(r, 2)});
    }
    j["registration"] = {{"scale", registration.scale},
                         {"rotation", rot},
                         {"translation",
                          {registration.translation.x(), registration.translation.y(), registration.translation.z()}}};
    Json poses = Json::array();
    for (const auto& p : pose_errors) {
        poses.push_back({{"view", p.view}, {"rotation_deg", p.rotation_deg}, {"center_distance", p.center_distance}});
    }
    j["pose_errors"] = poses;
    return j;
}

namespace {

const PointMap& focal_source(const ConnectivityGraph& graph, int v) {
    if (graph.view_maps.size() == static_cast<std::size_t>(graph.view_count)) return graph.view_maps[v];
    for (const auto& e : graph.edges) {
        if (e.first == v) return e.first_map;
    }
    fail(ErrorCode::InsufficientData, "no own-frame point map for view " + std::to_string(v));
}

}  // namespace

InitResult initialize_from_bundle(const SceneBundle& bundle, const InitPipelineOptions& options) {
    const ConnectivityGraph& graph = bundle.graph;
    require(graph.view_count > 0 && !graph.edges.empty(), ErrorCode::Data, "bundle has no pair graph");
    const auto train = bundle.train_indices();
    InitResult result;

    for (int v = 0; v < graph.view_count; ++v) result.focals.push_back(estimate_focal(focal_source(graph, v)).focal);
    result.mean_focal = average_focal(result.focals);

    const AlignmentState start = initialize_alignment(graph);
    result.initial_objective = start.objective;
    AlignmentState aligned = global_align(graph, start, options.align);
    result.final_objective = aligned.objective;
    result.alignment_steps = aligned.trace.size();

    // similarity from estimated to given camera centres
    std::vector<Vec3> est, given;
    std::vector<int> posed;
    for (int v = 0; v < graph.view_count; ++v) {
        if (!aligned.view_poses[v]) continue;
        const RigidTransform& p = *aligned.view_poses[v];
        est.push_back(-p.rotation.transpose() * p.translation);
        given.push_back(bundle.views[train[v]].camera.center());
        posed.push_back(v);
    }
    if (est.size() >= 3) {
        result.registration = weighted_umeyama(est, given, std::vector<double>(est.size(), 1.0));
    } else {
        // only view 0 is usable: adopt its pose at unit scale
        const RigidTransform to_world = bundle.views[train[0]].camera.pose.inverse();
        result.registration.rotation = to_world.rotation;
        result.registration.translation = to_world.translation;
    }
    const Similarity& reg = result.registration;
    for (std::size_t i = 0; i < posed.size(); ++i) {
        const int v = posed[i];
        const Camera& cam = bundle.views[train[v]].camera;
        const Mat3 est_to_world = reg.rotation * aligned.view_poses[v]->rotation.transpose();
        const Mat3 diff = est_to_world.transpose() * cam.pose.rotation.transpose();
        const double c = std::clamp((diff.trace() - 1.0) / 2.0, -1.0, 1.0);
        result.pose_errors.push_back(
            {bundle.views[train[v]].name, std::acos(c) * 180.0 / std::numbers::pi, (reg.apply(est[i]) - given[i]).norm()});
    }

    std::vector<PointMap> maps = std::move(aligned.world_maps);
    for (int v = 0; v < graph.view_count; ++v) {
        for (auto& p : maps[v].points.values) p = reg.apply(p);
        const ImageBuffer& img = bundle.views[train[v]].image;
        if (img.same_shape(maps[v].points)) maps[v].colors = img;
        for (double c : maps[v].confidence.values) result.confident_pixels += c >= options.init.confidence_threshold;
    }
    result.cloud = init_gaussians_from_points(maps, options.init);
    return result;
}

std::vector<TrainView> bundle_views(const SceneBundle& bundle, bool train, std::vector<std::string>* names) {
    std::vector<TrainView> out;
    for (std::size_t i : train ? bundle.train_indices() : bundle.test_indices()) {
        const BundleView& v = bundle.views[i];
        out.push_back({v.camera, v.image, v.depth});
        if (names) names->push_back(v.name);
    }
    return out;
}

}  // namespace sgs
