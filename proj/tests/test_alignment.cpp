#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "sgs/alignment.hpp"
#include "sgs/error.hpp"
#include "support.hpp"

using namespace sgs;

namespace {

/// Exact pinhole point map in the camera's own frame.
PointMap pinhole_map(std::mt19937_64& rng, double focal, int w, int h) {
    std::uniform_real_distribution<double> z(1.0, 6.0);
    PointMap m;
    m.points = Grid<Vec3>(w, h, Vec3::Zero());
    m.confidence = Grid<double>(w, h, 1.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d = z(rng);
            m.points.at(x, y) = d * Vec3((x - w / 2.0) / focal, (y - h / 2.0) / focal, 1.0);
        }
    }
    return m;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
    // ||A - B||_F = 2 sqrt(2) sin(theta / 2), accurate near zero
    return 2.0 * std::asin(std::min(1.0, (a - b).norm() / (2.0 * std::sqrt(2.0))));
}

/// Views of a smooth world surface; edges carry maps in the first view's frame
/// times a per-edge scale.
struct AlignScene {
    std::vector<Camera> cameras;
    std::vector<Grid<Vec3>> world;     // ground-truth world point per pixel
    ConnectivityGraph graph;
};

AlignScene align_scene(std::mt19937_64& rng, int views, const std::vector<std::pair<int, int>>& edges,
                       double noise = 0.0) {
    AlignScene s;
    const int w = 24, h = 18;
    const double f = 20.0;
    for (int v = 0; v < views; ++v) {
        const double a = 0.35 * v;
        s.cameras.push_back(
            Camera::look_at(f, w, h, Vec3(3.0 * std::sin(a), 0.3 * v, -3.0 * std::cos(a)), Vec3(0.1, 0.0, 0.2)));
    }
    s.cameras[0].pose = RigidTransform{};
    // first camera at the origin looking along +z towards a bumpy surface
    s.cameras[0] = Camera::centered(f, w, h);
    for (int v = 1; v < views; ++v) {
        const double a = 0.3 * v;
        s.cameras[v] = Camera::look_at(f, w, h, Vec3(2.0 * std::sin(a), 0.2 * v, 4.0 - 4.0 * std::cos(a)),
                                       Vec3(0.0, 0.0, 4.0));
    }
    std::normal_distribution<double> n(0.0, noise);
    std::vector<PointMap> own(views);
    for (int v = 0; v < views; ++v) {
        const Camera& cam = s.cameras[v];
        Grid<Vec3> world(w, h, Vec3::Zero());
        own[v].points = Grid<Vec3>(w, h, Vec3::Zero());
        own[v].confidence = Grid<double>(w, h, 1.0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double depth = 4.0 + 0.3 * std::sin(0.4 * x + v) + 0.2 * std::cos(0.3 * y);
                const Vec3 pc = depth * Vec3((x - w / 2.0) / f, (y - h / 2.0) / f, 1.0);
                own[v].points.at(x, y) = pc;
                world.at(x, y) = cam.pose.inverse().apply(pc);
            }
        }
        s.world.push_back(world);
    }
    s.graph.view_count = views;
    s.graph.view_maps = own;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        GraphEdge edge;
        edge.first = edges[e].first;
        edge.second = edges[e].second;
        const double scale = 0.5 + 0.3 * static_cast<double>(e);
        const RigidTransform& frame = s.cameras[edge.first].pose;
        for (int side = 0; side < 2; ++side) {
            const int v = side == 0 ? edge.first : edge.second;
            PointMap m;
            m.points = Grid<Vec3>(w, h, Vec3::Zero());
            m.confidence = Grid<double>(w, h, 1.0);
            for (std::size_t i = 0; i < m.points.size(); ++i) {
                Vec3 p = scale * frame.apply(s.world[v][i]);
                if (noise > 0.0) p += Vec3(n(rng), n(rng), n(rng));
                m.points[i] = p;
            }
            (side == 0 ? edge.first_map : edge.second_map) = m;
        }
        s.graph.edges.push_back(edge);
    }
    return s;
}

double mean_world_error(const AlignScene& s, const AlignmentState& st) {
    std::vector<Vec3> est, truth;
    for (std::size_t v = 0; v < s.world.size(); ++v) {
        est.insert(est.end(), st.world_maps[v].points.values.begin(), st.world_maps[v].points.values.end());
        truth.insert(truth.end(), s.world[v].values.begin(), s.world[v].values.end());
    }
    const std::vector<double> w(est.size(), 1.0);
    const Similarity sim = weighted_umeyama(est, truth, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) sum += (sim.apply(est[i]) - truth[i]).norm();
    return sum / static_cast<double>(est.size());
}

}  // namespace

TEST_CASE("estimate_focal: exact pinhole map") {
    std::mt19937_64 rng(1);
    const PointMap m = pinhole_map(rng, 250.0, 128, 96);
    const FocalEstimate f = estimate_focal(m);
    CHECK(std::abs(f.focal - 250.0) / 250.0 < 1e-3);
}

TEST_CASE("estimate_focal: robust to corrupted zero-confidence pixels") {
    std::mt19937_64 rng(2);
    PointMap m = pinhole_map(rng, 250.0, 128, 96);
    std::uniform_int_distribution<std::size_t> pick(0, m.points.size() - 1);
    std::uniform_real_distribution<double> junk(-50.0, 50.0);
    for (std::size_t k = 0; k < m.points.size() / 20; ++k) {
        const std::size_t i = pick(rng);
        m.confidence[i] = 0.0;
        m.points[i] = Vec3(junk(rng), junk(rng), junk(rng));
    }
    CHECK(std::abs(estimate_focal(m).focal - 250.0) / 250.0 < 5e-3);
}

TEST_CASE("estimate_focal: robust residuals downweight outliers") {
    std::mt19937_64 rng(3);
    PointMap m = pinhole_map(rng, 250.0, 64, 48);
    std::uniform_int_distribution<std::size_t> pick(0, m.points.size() - 1);
    for (std::size_t k = 0; k < m.points.size() / 20; ++k) {
        const std::size_t i = pick(rng);
        m.points[i] = Vec3(m.points[i].x() * 1.6, m.points[i].y() * 1.6, m.points[i].z());
    }
    CHECK(std::abs(estimate_focal(m).focal - 250.0) / 250.0 < 5e-3);
}

TEST_CASE("estimate_focal: fixed point returns in one iteration") {
    PointMap m;
    m.points = Grid<Vec3>(8, 6, Vec3::Zero());
    m.confidence = Grid<double>(8, 6, 1.0);
    for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 8; ++x) m.points.at(x, y) = Vec3((x - 4.0) / 4.0, (y - 3.0) / 4.0, 1.0);
    }
    const FocalEstimate f = estimate_focal(m);
    CHECK(f.focal == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(f.iterations == 1);
}

TEST_CASE("estimate_focal: scale invariance") {
    std::mt19937_64 rng(4);
    PointMap m = pinhole_map(rng, 180.0, 40, 30);
    std::normal_distribution<double> n(0.0, 0.002);
    for (auto& p : m.points.values) p += Vec3(n(rng), n(rng), 0.0);
    const double base = estimate_focal(m).focal;
    std::uniform_real_distribution<double> s(0.01, 100.0);
    for (int trial = 0; trial < 10; ++trial) {
        PointMap scaled = m;
        const double k = s(rng);
        for (auto& p : scaled.points.values) p *= k;
        CHECK(estimate_focal(scaled).focal == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("estimate_focal: errors") {
    PointMap m;
    m.points = Grid<Vec3>(4, 2, Vec3(0.1, 0.1, 1.0));
    m.confidence = Grid<double>(4, 2, 1.0);
    try {
        estimate_focal(m);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
    std::mt19937_64 rng(5);
    PointMap flipped = pinhole_map(rng, 100.0, 16, 12);
    for (auto& p : flipped.points.values) p = Vec3(-p.x(), -p.y(), p.z());
    try {
        estimate_focal(flipped);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EstimationFailed);
    }
}

TEST_CASE("estimate_focal: runtime at 128x96") {
    std::mt19937_64 rng(6);
    const PointMap m = pinhole_map(rng, 250.0, 128, 96);
    const auto t0 = std::chrono::steady_clock::now();
    estimate_focal(m);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
}

TEST_CASE("average_focal") {
    const std::vector<double> one{250.0}, two{200.0, 300.0}, none;
    CHECK(average_focal(one) == 250.0);
    CHECK(average_focal(two) == 250.0);
    CHECK_THROWS_AS(average_focal(none), Error);

    std::mt19937_64 rng(7);
    std::vector<double> per_view;
    for (int v = 0; v < 8; ++v) per_view.push_back(estimate_focal(pinhole_map(rng, 120.0, 64, 48)).focal);
    CHECK(std::abs(average_focal(per_view) - 120.0) / 120.0 < 5e-3);
}

TEST_CASE("weighted_umeyama recovers a similarity") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    Similarity truth;
    truth.scale = 2.5;
    truth.rotation = rotation_from_quaternion(testing::random_unit_quaternion(rng));
    truth.translation = Vec3(1.0, -2.0, 0.5);
    std::vector<Vec3> src, dst;
    std::vector<double> w;
    for (int i = 0; i < 50; ++i) {
        src.emplace_back(n(rng), n(rng), n(rng));
        dst.push_back(truth.apply(src.back()));
        w.push_back(0.5 + std::abs(n(rng)));
    }
    // a zero-weight outlier must not matter
    src.emplace_back(0.0, 0.0, 0.0);
    dst.emplace_back(100.0, 100.0, 100.0);
    w.push_back(0.0);
    const Similarity est = weighted_umeyama(src, dst, w);
    CHECK(est.scale == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(rotation_angle(est.rotation, truth.rotation) < 1e-9);
    CHECK((est.translation - truth.translation).norm() < 1e-9);
    CHECK(est.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("global_align: noiseless two views") {
    std::mt19937_64 rng(9);
    const AlignScene s = align_scene(rng, 2, {{0, 1}});
    const AlignmentState st = global_align(s.graph);
    CHECK(st.objective < 1e-8);
    REQUIRE(st.view_poses[1].has_value());
    const RigidTransform truth = s.cameras[1].pose;  // camera 0 is the world frame
    CHECK(rotation_angle(st.view_poses[1]->rotation, truth.rotation) < 1e-3);
    const Vec3 t_est = st.view_poses[1]->translation, t_true = truth.translation;
    CHECK((t_est / t_est.norm() - t_true / t_true.norm()).norm() < 1e-3);
    CHECK(st.view_poses[0]->rotation == Mat3::Identity());
    CHECK(st.view_poses[0]->translation == Vec3::Zero());
    for (const auto& step : st.trace) CHECK(std::abs(step.scale_product - 1.0) < 1e-9);
}

TEST_CASE("global_align: single identity edge starts at zero objective") {
    std::mt19937_64 rng(10);
    AlignScene s = align_scene(rng, 2, {{0, 1}});
    // rewrite the edge at scale 1
    for (int side = 0; side < 2; ++side) {
        auto& m = side == 0 ? s.graph.edges[0].first_map : s.graph.edges[0].second_map;
        for (std::size_t i = 0; i < m.points.size(); ++i) m.points[i] = s.world[side][i];
    }
    AlignmentState start;
    start.anchor_edge = 0;
    start.edges.assign(1, EdgeTransform{});
    start.world_maps = {s.graph.edges[0].first_map, s.graph.edges[0].second_map};
    CHECK(alignment_objective(s.graph, start) == 0.0);
    AlignmentOptions opt;
    opt.iterations = 5;
    const AlignmentState st = global_align(s.graph, start, opt);
    CHECK(st.objective == 0.0);
}

TEST_CASE("global_align: noisy three-view chain") {
    std::mt19937_64 rng(11);
    const AlignScene s = align_scene(rng, 3, {{0, 1}, {1, 2}}, 0.01);
    const AlignmentState st = global_align(s.graph);
    CHECK(mean_world_error(s, st) < 0.05);
    for (const auto& step : st.trace) CHECK(std::abs(step.scale_product - 1.0) < 1e-9);
}

TEST_CASE("global_align: accepted steps never increase the objective") {
    std::mt19937_64 rng(12);
    const AlignScene s = align_scene(rng, 4, {{0, 1}, {0, 2}, {1, 2}, {2, 3}, {3, 1}});
    AlignmentState start = initialize_alignment(s.graph);
    std::normal_distribution<double> n(0.0, 0.02);
    for (auto& m : start.world_maps) {
        for (auto& p : m.points.values) p += Vec3(n(rng), n(rng), n(rng));
    }
    for (std::size_t e = 0; e < start.edges.size(); ++e) {
        if (e == start.anchor_edge) continue;
        start.edges[e].translation += Vec3(n(rng), n(rng), n(rng));
        start.edges[e].log_scale += n(rng);
    }
    double mean = 0.0;
    for (const auto& e : start.edges) mean += e.log_scale;
    mean /= static_cast<double>(start.edges.size());
    for (auto& e : start.edges) e.log_scale -= mean;
    for (auto& m : start.world_maps) {
        for (auto& p : m.points.values) p *= std::exp(-mean);
    }
    const double initial = alignment_objective(s.graph, start);
    const AlignmentState st = global_align(s.graph, start, {});
    REQUIRE(st.trace.size() == 300);
    double prev = initial;
    int accepted = 0;
    for (const auto& step : st.trace) {
        CHECK(step.objective <= prev + 1e-12);
        CHECK(std::abs(step.scale_product - 1.0) < 1e-9);
        prev = step.objective;
        accepted += step.accepted;
    }
    CHECK(accepted > 0);
    CHECK(st.objective < initial);
    CHECK(st.edges[st.anchor_edge].rotation == Vec4(1.0, 0.0, 0.0, 0.0));
    CHECK(st.edges[st.anchor_edge].translation == Vec3::Zero());
    CHECK(st.view_poses[0]->rotation == Mat3::Identity());
}

TEST_CASE("global_align: poses of all views in a ring") {
    std::mt19937_64 rng(13);
    const AlignScene s = align_scene(rng, 4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
    AlignmentOptions opt;
    opt.iterations = 20;
    const AlignmentState st = global_align(s.graph, opt);
    // fix the global scale from view 1 and compare every camera
    const double k = st.view_poses[1]->translation.norm() / s.cameras[1].pose.translation.norm();
    for (int v = 1; v < 4; ++v) {
        REQUIRE(st.view_poses[v].has_value());
        CHECK(rotation_angle(st.view_poses[v]->rotation, s.cameras[v].pose.rotation) < 1e-6);
        CHECK((st.view_poses[v]->translation - k * s.cameras[v].pose.translation).norm() < 1e-6);
    }
}

TEST_CASE("global_align: graph errors") {
    std::mt19937_64 rng(14);
    AlignScene s = align_scene(rng, 3, {{0, 1}});
    try {
        global_align(s.graph);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidGraph);
    }
    AlignScene t = align_scene(rng, 2, {{1, 0}});
    CHECK_THROWS_AS(global_align(t.graph), Error);
}

TEST_CASE("init: single red point") {
    PointMap m;
    m.points = Grid<Vec3>(1, 1, Vec3(0.5, -1.0, 3.0));
    m.confidence = Grid<double>(1, 1, 2.0);
    m.colors = make_image(1, 1, Vec3(1.0, 0.0, 0.0));
    const GaussianCloud c = init_gaussians_from_points(std::span<const PointMap>(&m, 1));
    REQUIRE(c.size() == 1);
    const auto& g = c.primitives[0];
    CHECK(g.position == Vec3(0.5, -1.0, 3.0));
    const Vec3 rgb = sh_to_color(g.sh, c.sh_degree, Vec3(0.0, 0.0, 1.0));
    CHECK(rgb.x() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(rgb.y()) < 1e-15);
    CHECK(g.opacity() == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(g.rotation == Vec4(1.0, 0.0, 0.0, 0.0));
}

TEST_CASE("init: nothing confident is an error") {
    PointMap m;
    m.points = Grid<Vec3>(3, 3, Vec3(0.0, 0.0, 1.0));
    m.confidence = Grid<double>(3, 3, 0.99);
    try {
        init_gaussians_from_points(std::span<const PointMap>(&m, 1));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyCloud);
    }
}

TEST_CASE("init: grid spacing sets the scale") {
    for (double h : {0.05, 0.3, 2.0}) {
        PointMap m;
        const int n = 6;
        m.points = Grid<Vec3>(n * n, n, Vec3::Zero());
        m.confidence = Grid<double>(n * n, n, 1.0);
        for (int z = 0; z < n; ++z) {
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) m.points.at(y * n + x, z) = h * Vec3(x, y, z) + Vec3(1.0, 2.0, 3.0);
            }
        }
        const GaussianCloud c = init_gaussians_from_points(std::span<const PointMap>(&m, 1));
        REQUIRE(c.size() == static_cast<std::size_t>(n * n * n));
        for (const auto& g : c.primitives) {
            for (int k = 0; k < 3; ++k) CHECK(g.log_scales[k] == doctest::Approx(std::log(h)).epsilon(1e-9));
        }
    }
}

TEST_CASE("init: threshold and voxel downsampling") {
    PointMap m;
    m.points = Grid<Vec3>(4, 1, Vec3::Zero());
    m.confidence = Grid<double>(4, 1, 1.0);
    m.points[0] = Vec3(0.01, 0.01, 0.01);
    m.points[1] = Vec3(0.02, 0.03, 0.04);
    m.points[2] = Vec3(1.5, 0.0, 0.0);
    m.points[3] = Vec3(3.0, 0.0, 0.0);
    m.confidence[3] = 0.5;
    InitOptions opt;
    CHECK(init_gaussians_from_points(std::span<const PointMap>(&m, 1), opt).size() == 3);
    opt.voxel_size = 1.0;
    const GaussianCloud c = init_gaussians_from_points(std::span<const PointMap>(&m, 1), opt);
    REQUIRE(c.size() == 2);
    CHECK((c.primitives[0].position - Vec3(0.015, 0.02, 0.025)).norm() < 1e-15);
    opt.confidence_threshold = 0.4;
    opt.voxel_size = 0.0;
    CHECK(init_gaussians_from_points(std::span<const PointMap>(&m, 1), opt).size() == 4);
}

TEST_CASE("mean_neighbor_distance matches brute force") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int n : {2, 3, 5, 200, 1500}) {
        std::vector<Vec3> pts;
        for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), 0.2 * u(rng), u(rng) * u(rng));
        const auto fast = mean_neighbor_distance(pts, 3);
        for (int i = 0; i < n; ++i) {
            std::vector<double> d;
            for (int j = 0; j < n; ++j) {
                if (j != i) d.push_back((pts[j] - pts[i]).norm());
            }
            std::sort(d.begin(), d.end());
            const std::size_t k = std::min<std::size_t>(3, d.size());
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) sum += d[j];
            CHECK(fast[i] == doctest::Approx(sum / k).epsilon(1e-12));
        }
    }
}
